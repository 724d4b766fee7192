#include "posediff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

namespace posediff {

namespace {

constexpr char kMagic[4] = {'P', 'D', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint32_t crc_of(const std::uint8_t* data, std::size_t size) {
    uLong crc = crc32(0L, Z_NULL, 0);
    return static_cast<std::uint32_t>(crc32(crc, data, static_cast<uInt>(size)));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Denoiser<float>& model, const nlohmann::json& metadata,
                     const Buffers& buffers) {
    nlohmann::json header;
    header["config"] = model.config().to_json();
    header["metadata"] = metadata;
    header["tensors"] = nlohmann::json::array();
    for (const auto& p : model.parameters())
        header["tensors"].push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
    header["buffers"] = nlohmann::json::array();
    for (const auto& [name, m] : buffers)
        header["buffers"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    const std::string header_text = header.dump();

    std::vector<std::uint8_t> bytes(std::begin(kMagic), std::end(kMagic));
    put_u32(bytes, kVersion);
    put_u32(bytes, static_cast<std::uint32_t>(header_text.size()));
    bytes.insert(bytes.end(), header_text.begin(), header_text.end());
    for (const auto& p : model.parameters()) {
        if (!p.value.allFinite()) throw Error(ErrorCode::NonFiniteInput, "parameter " + p.name + " is not finite");
        for (Eigen::Index i = 0; i < p.value.size(); ++i) put_u32(bytes, std::bit_cast<std::uint32_t>(p.value.data()[i]));
    }
    for (const auto& [name, m] : buffers) {
        if (!m.allFinite()) throw Error(ErrorCode::NonFiniteInput, "buffer " + name + " is not finite");
        for (Eigen::Index i = 0; i < m.size(); ++i) put_u32(bytes, std::bit_cast<std::uint32_t>(m.data()[i]));
    }
    put_u32(bytes, crc_of(bytes.data(), bytes.size()));

    // Write to a sibling file first so an interrupted save never clobbers a good checkpoint.
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error(ErrorCode::IoError, "cannot open " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error(ErrorCode::IoError, "failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const SkeletonTopology& topology) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw Error(ErrorCode::UnsupportedFormat, "not a checkpoint: " + path.string());
    if (bytes.size() < 16) throw Error(ErrorCode::CorruptFile, "truncated checkpoint");
    if (get_u32(bytes.data() + 4) != kVersion) throw Error(ErrorCode::UnsupportedFormat, "unsupported checkpoint version");
    const std::size_t body = bytes.size() - 4;
    if (get_u32(bytes.data() + body) != crc_of(bytes.data(), body))
        throw Error(ErrorCode::CorruptFile, "checksum mismatch in " + path.string());

    const std::uint32_t header_len = get_u32(bytes.data() + 8);
    if (12 + static_cast<std::size_t>(header_len) > body) throw Error(ErrorCode::CorruptFile, "header overruns file");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::CorruptFile, e.what());
    }
    Denoiser<float> model(DenoiserConfig::from_json(header.at("config")), topology);

    std::size_t offset = 12 + header_len;
    const auto& tensors = header.at("tensors");
    if (tensors.size() != model.parameters().size())
        throw Error(ErrorCode::CorruptFile, "tensor count does not match the configured network");
    for (const auto& entry : tensors) {
        const auto name = entry.at("name").get<std::string>();
        if (!model.parameters().contains(name)) throw Error(ErrorCode::CorruptFile, "unexpected tensor " + name);
        auto& p = model.parameters().at(name);
        if (entry.at("rows").get<Eigen::Index>() != p.value.rows() || entry.at("cols").get<Eigen::Index>() != p.value.cols())
            throw Error(ErrorCode::CorruptFile, "tensor " + name + " has the wrong shape for the config");
        const std::size_t count = static_cast<std::size_t>(p.value.size());
        if (offset + 4 * count > body) throw Error(ErrorCode::CorruptFile, "tensor data truncated");
        for (std::size_t i = 0; i < count; ++i)
            p.value.data()[i] = std::bit_cast<float>(get_u32(bytes.data() + offset + 4 * i));
        p.grad.setZero(p.value.rows(), p.value.cols());
        offset += 4 * count;
    }
    Buffers buffers;
    for (const auto& entry : header.value("buffers", nlohmann::json::array())) {
        const auto rows = entry.at("rows").get<Eigen::Index>(), cols = entry.at("cols").get<Eigen::Index>();
        if (rows < 0 || cols < 0) throw Error(ErrorCode::CorruptFile, "negative buffer shape");
        Eigen::MatrixXf m(rows, cols);
        const std::size_t count = static_cast<std::size_t>(m.size());
        if (offset + 4 * count > body) throw Error(ErrorCode::CorruptFile, "buffer data truncated");
        for (std::size_t i = 0; i < count; ++i) m.data()[i] = std::bit_cast<float>(get_u32(bytes.data() + offset + 4 * i));
        offset += 4 * count;
        buffers.emplace(entry.at("name").get<std::string>(), std::move(m));
    }
    if (offset != body) throw Error(ErrorCode::CorruptFile, "trailing bytes after tensor data");
    return LoadedCheckpoint{std::move(model), header.value("metadata", nlohmann::json::object()), std::move(buffers)};
}

}  // namespace posediff
