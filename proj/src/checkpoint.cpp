#include "vlpt/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

namespace vlpt {

namespace {

constexpr char kMagic[8] = {'V', 'L', 'P', 'T', 'C', 'K', 'P', '1'};

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

template <typename T>
void put(std::string& out, T v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_str(std::string& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.append(s);
}

struct Reader {
    const std::string& bytes;
    std::size_t pos = 0;
    template <typename T>
    T get() {
        if (pos + sizeof(T) > bytes.size()) throw std::runtime_error("checkpoint: truncated file");
        T v{};
        std::memcpy(&v, bytes.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }
    std::string get_str() {
        const auto n = get<std::uint32_t>();
        if (pos + n > bytes.size()) throw std::runtime_error("checkpoint: truncated file");
        std::string s(bytes.data() + pos, n);
        pos += n;
        return s;
    }
};

nlohmann::json config_to_json(const ModelConfig& c) {
    return {
        {"hidden_size", c.hidden_size},
        {"encoder_blocks", c.encoder_blocks},
        {"decoder_blocks", c.decoder_blocks},
        {"heads", c.heads},
        {"max_tokens", c.max_tokens},
        {"max_frames", c.max_frames},
        {"vocab_size", c.vocab_size},
        {"frame_feature_dim", c.frame_feature_dim},
        {"ff_mult", c.ff_mult},
        {"tie_decoder_head", c.tie_decoder_head},
        {"decoder_cross_attends_text", c.decoder_cross_attends_text},
    };
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.hidden_size = j.at("hidden_size").get<int>();
    c.encoder_blocks = j.at("encoder_blocks").get<int>();
    c.decoder_blocks = j.at("decoder_blocks").get<int>();
    c.heads = j.at("heads").get<int>();
    c.max_tokens = j.at("max_tokens").get<int>();
    c.max_frames = j.at("max_frames").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.frame_feature_dim = j.at("frame_feature_dim").get<int>();
    c.ff_mult = j.at("ff_mult").get<int>();
    c.tie_decoder_head = j.at("tie_decoder_head").get<bool>();
    c.decoder_cross_attends_text = j.at("decoder_cross_attends_text").get<bool>();
    return c;
}

}   // namespace

void save_checkpoint(const std::string& path, const ModelConfig& cfg, const NamedParams& entries,
                     const std::map<std::string, std::string>& meta) {
    std::string buf;
    buf.append(kMagic, sizeof(kMagic));
    nlohmann::json header = {{"config", config_to_json(cfg)}, {"meta", meta}};
    put_str(buf, header.dump());
    put<std::uint64_t>(buf, entries.size());
    for (const auto& [name, t] : entries) {
        put_str(buf, name);
        put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.shape().size()));
        for (int d : t.shape()) put<std::uint32_t>(buf, static_cast<std::uint32_t>(d));
        put<std::uint64_t>(buf, t.size());
        buf.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(double));
    }
    const std::uint64_t hash = fnv1a(buf);
    put<std::uint64_t>(buf, hash);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    if (bytes.size() < sizeof(kMagic) + sizeof(std::uint64_t)) {
        throw std::runtime_error("checkpoint: file too small: " + path);
    }
    if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("checkpoint: bad magic or unsupported version: " + path);
    }
    std::uint64_t stored_hash = 0;
    std::memcpy(&stored_hash, bytes.data() + bytes.size() - sizeof(std::uint64_t), sizeof(std::uint64_t));
    const std::string body = bytes.substr(0, bytes.size() - sizeof(std::uint64_t));
    if (fnv1a(body) != stored_hash) {
        throw std::runtime_error("checkpoint: manifest hash mismatch (corrupt or truncated): " + path);
    }

    Reader r{body, sizeof(kMagic)};
    LoadedCheckpoint out;
    nlohmann::json header = nlohmann::json::parse(r.get_str());
    out.config = config_from_json(header.at("config"));
    for (auto& [k, v] : header.at("meta").items()) out.meta[k] = v.get<std::string>();
    const auto n = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < n; ++i) {
        const std::string name = r.get_str();
        const auto ndims = r.get<std::uint32_t>();
        std::vector<int> shape;
        for (std::uint32_t d = 0; d < ndims; ++d) shape.push_back(static_cast<int>(r.get<std::uint32_t>()));
        const auto count = r.get<std::uint64_t>();
        std::vector<double> data(count);
        for (auto& v : data) v = r.get<double>();
        out.entries.emplace_back(name, Tensor::from(shape, std::move(data)));
    }
    return out;
}

ModelParams model_from_checkpoint(const LoadedCheckpoint& ckpt) {
    ModelParams params = ModelParams::init(ckpt.config, 0);
    std::unordered_map<std::string, Tensor> by_name;
    for (const auto& [name, t] : ckpt.entries) by_name.emplace(name, t);

    // Fine-tuning heads exist only if the checkpoint carries them.
    if (auto it = by_name.find("model.head.plot.w"); it != by_name.end()) {
        params.ensure_plot_head(it->second.cols(), 0);
    }
    if (auto it = by_name.find("model.head.top.w"); it != by_name.end()) {
        auto leaf = by_name.find("model.head.leaf.w");
        if (leaf == by_name.end()) throw std::runtime_error("checkpoint: top head present without leaf head");
        params.ensure_product_heads(it->second.cols(), leaf->second.cols(), 0);
    }

    for (auto& [name, t] : params.named()) {
        auto it = by_name.find("model." + name);
        if (it == by_name.end()) {
            throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
        }
        if (it->second.shape() != t.shape()) {
            throw std::runtime_error("checkpoint: shape mismatch on '" + name + "'");
        }
        t.data() = it->second.data();
    }
    return params;
}

void require_same_model_config(const ModelConfig& e, const ModelConfig& a) {
    const auto fail = [](const char* field) {
        throw std::runtime_error(std::string("model config mismatch on field '") + field + "'");
    };
    if (e.hidden_size != a.hidden_size) fail("hidden_size");
    if (e.encoder_blocks != a.encoder_blocks) fail("encoder_blocks");
    if (e.decoder_blocks != a.decoder_blocks) fail("decoder_blocks");
    if (e.heads != a.heads) fail("heads");
    if (e.max_tokens != a.max_tokens) fail("max_tokens");
    if (e.max_frames != a.max_frames) fail("max_frames");
    if (e.vocab_size != a.vocab_size) fail("vocab_size");
    if (e.frame_feature_dim != a.frame_feature_dim) fail("frame_feature_dim");
    if (e.ff_mult != a.ff_mult) fail("ff_mult");
    if (e.tie_decoder_head != a.tie_decoder_head) fail("tie_decoder_head");
    if (e.decoder_cross_attends_text != a.decoder_cross_attends_text) fail("decoder_cross_attends_text");
}

}   // namespace vlpt
