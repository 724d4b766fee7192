#include "posediff/text_embedding.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace posediff {

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{"<pad>", "<unk>"}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < 2 || tokens_[0] != "<pad>" || tokens_[1] != "<unk>")
        throw Error(ErrorCode::ParseError, "vocabulary must start with <pad>, <unk>");
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (!token_to_id_.emplace(tokens_[i], static_cast<int>(i)).second)
            throw Error(ErrorCode::ParseError, "duplicate vocabulary token '" + tokens_[i] + "'");
    }
}

Vocabulary Vocabulary::from_captions(std::span<const std::string> captions) {
    std::set<std::string> words;
    for (const auto& c : captions) {
        for (auto& w : normalize_words(c)) words.insert(std::move(w));
    }
    std::vector<std::string> tokens{"<pad>", "<unk>"};
    tokens.insert(tokens.end(), words.begin(), words.end());
    return Vocabulary(std::move(tokens));
}

int Vocabulary::id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
}

nlohmann::json Vocabulary::to_json() const { return nlohmann::json{{"tokens", tokens_}}; }

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
    try {
        return Vocabulary(j.at("tokens").get<std::vector<std::string>>());
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, e.what());
    }
}

std::vector<std::string> normalize_words(std::string_view caption) {
    std::string cleaned;
    cleaned.reserve(caption.size());
    for (char ch : caption) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::ispunct(c)) continue;
        cleaned.push_back(static_cast<char>(std::tolower(c)));
    }
    std::vector<std::string> words;
    std::istringstream stream(cleaned);
    for (std::string w; stream >> w;) words.push_back(std::move(w));
    if (words.empty()) throw Error(ErrorCode::EmptyCaption, "caption is empty after normalisation");
    return words;
}

std::vector<int> tokenize(std::string_view caption, const Vocabulary& vocab) {
    std::vector<int> ids;
    for (const auto& w : normalize_words(caption)) ids.push_back(vocab.id(w));
    return ids;
}

PrecomputedEmbeddings PrecomputedEmbeddings::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error(ErrorCode::ParseError, "embedding file must hold a JSON object");
    PrecomputedEmbeddings out;
    try {
        for (const auto& [key, value] : j.items()) {
            auto v = value.get<std::vector<double>>();
            if (v.empty()) throw Error(ErrorCode::InconsistentDimension, "empty embedding for " + key);
            if (out.dimension_ == 0) out.dimension_ = static_cast<int>(v.size());
            if (static_cast<int>(v.size()) != out.dimension_)
                throw Error(ErrorCode::InconsistentDimension,
                            "entry " + key + " has dimension " + std::to_string(v.size()) + ", expected " +
                                std::to_string(out.dimension_));
            out.table_.emplace(key, Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, e.what());
    }
    return out;
}

const Eigen::VectorXd& PrecomputedEmbeddings::lookup(const std::string& caption_id) const {
    auto it = table_.find(caption_id);
    if (it == table_.end()) throw Error(ErrorCode::MissingEmbedding, "no embedding for caption id " + caption_id);
    return it->second;
}

PrecomputedEmbeddings load_precomputed(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, e.what());
    }
    return PrecomputedEmbeddings::from_json(j);
}

}  // namespace posediff
