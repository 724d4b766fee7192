#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "posediff/errors.hpp"

namespace posediff {

/// Closed word vocabulary. Id 0 is padding and id 1 the unknown token.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    Vocabulary();
    explicit Vocabulary(std::vector<std::string> tokens);

    /// Sorted unique words of the captions after normalisation.
    static Vocabulary from_captions(std::span<const std::string> captions);

    int size() const { return static_cast<int>(tokens_.size()); }
    int id(const std::string& token) const;
    const std::vector<std::string>& tokens() const { return tokens_; }

    nlohmann::json to_json() const;
    static Vocabulary from_json(const nlohmann::json& j);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> token_to_id_;
};

/// Lowercases, removes punctuation and splits on whitespace.
/// Throws EmptyCaption when nothing remains.
std::vector<std::string> normalize_words(std::string_view caption);

std::vector<int> tokenize(std::string_view caption, const Vocabulary& vocab);

/// Sentence vector as the mean of the tokens' rows of `table`.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 1, Eigen::Dynamic>
embed_learned(std::span<const int> token_ids, const Eigen::MatrixBase<Derived>& table) {
    if (token_ids.empty()) throw Error(ErrorCode::EmptyCaption, "no tokens to embed");
    Eigen::Matrix<typename Derived::Scalar, 1, Eigen::Dynamic> sum =
        Eigen::Matrix<typename Derived::Scalar, 1, Eigen::Dynamic>::Zero(table.cols());
    for (int id : token_ids) {
        if (id < 0 || id >= table.rows()) throw Error(ErrorCode::UnknownTokenId, "token id " + std::to_string(id));
        sum += table.row(id);
    }
    return sum / static_cast<typename Derived::Scalar>(token_ids.size());
}

/// Externally computed sentence vectors keyed by caption id.
class PrecomputedEmbeddings {
public:
    PrecomputedEmbeddings() = default;

    /// JSON object {"caption_id": [d reals]}; every entry must share d.
    static PrecomputedEmbeddings from_json(const nlohmann::json& j);

    int dimension() const { return dimension_; }
    std::size_t size() const { return table_.size(); }
    bool contains(const std::string& caption_id) const { return table_.count(caption_id) != 0; }

    /// Throws MissingEmbedding for unknown ids.
    const Eigen::VectorXd& lookup(const std::string& caption_id) const;

private:
    int dimension_ = 0;
    std::map<std::string, Eigen::VectorXd> table_;
};

PrecomputedEmbeddings load_precomputed(const std::filesystem::path& path);

}  // namespace posediff
