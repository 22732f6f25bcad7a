#include "vlpt/data.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "vlpt/config.hpp"
#include "vlpt/rng.hpp"

namespace vlpt {

namespace {

template <typename T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("dataset: unexpected end of file");
    return v;
}

void write_ids(std::ostream& out, const std::vector<int>& ids) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ids.size()));
    for (int id : ids) write_pod<std::int32_t>(out, id);
}

std::vector<int> read_ids(std::istream& in) {
    const auto n = read_pod<std::uint32_t>(in);
    std::vector<int> ids(n);
    for (auto& id : ids) id = read_pod<std::int32_t>(in);
    return ids;
}

std::string serialize_record(const VideoTextRecord& r, int frame_dim) {
    std::ostringstream out(std::ios::binary);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(r.id.size()));
    out.write(r.id.data(), static_cast<std::streamsize>(r.id.size()));
    write_ids(out, r.token_ids);
    const int m = r.frame_features.defined() ? r.frame_features.rows() : 0;
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(m));
    if (m > 0) {
        if (r.frame_features.cols() != frame_dim) {
            throw std::runtime_error("dataset: record '" + r.id + "' frame dim " +
                                     std::to_string(r.frame_features.cols()) + " != header dim " +
                                     std::to_string(frame_dim));
        }
        for (double v : r.frame_features.data()) write_pod<double>(out, v);
    }
    write_pod<std::int32_t>(out, r.plot_label);
    write_pod<std::int32_t>(out, r.top_cate);
    write_pod<std::int32_t>(out, r.leaf_cate);
    write_pod<std::uint8_t>(out, r.product_image.empty() ? 0 : 1);
    if (!r.product_image.empty()) {
        if (static_cast<int>(r.product_image.size()) != frame_dim) {
            throw std::runtime_error("dataset: record '" + r.id + "' product image dim mismatch");
        }
        for (double v : r.product_image) write_pod<double>(out, v);
    }
    write_ids(out, r.abstract_token_ids);
    return out.str();
}

}   // namespace

void save_dataset(const std::string& path, const Dataset& ds) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    nlohmann::json header = {
        {"version", ds.header.version},
        {"vocab_size", ds.header.vocab_size},
        {"frame_feature_dim", ds.header.frame_feature_dim},
        {"max_tokens", ds.header.max_tokens},
        {"max_frames", ds.header.max_frames},
        {"record_count", static_cast<int>(ds.records.size())},
    };
    out << header.dump() << "\n";
    for (const auto& r : ds.records) {
        const std::string blob = serialize_record(r, ds.header.frame_feature_dim);
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(blob.size()));
        out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open dataset: " + path);
    std::string header_line;
    if (!std::getline(in, header_line)) throw std::runtime_error("dataset: missing header line in " + path);
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(header_line);
    } catch (const std::exception& e) {
        throw std::runtime_error("dataset: bad header in " + path + ": " + e.what());
    }
    Dataset ds;
    ds.header.version = h.at("version").get<int>();
    if (ds.header.version != 1) {
        throw std::runtime_error("dataset: unsupported version " + std::to_string(ds.header.version));
    }
    ds.header.vocab_size = h.at("vocab_size").get<int>();
    ds.header.frame_feature_dim = h.at("frame_feature_dim").get<int>();
    ds.header.max_tokens = h.at("max_tokens").get<int>();
    ds.header.max_frames = h.at("max_frames").get<int>();
    ds.header.record_count = h.at("record_count").get<int>();

    const int D = ds.header.frame_feature_dim;
    for (int i = 0; i < ds.header.record_count; ++i) {
        const auto blob_len = read_pod<std::uint32_t>(in);
        (void)blob_len;
        VideoTextRecord r;
        const auto id_len = read_pod<std::uint32_t>(in);
        r.id.resize(id_len);
        in.read(r.id.data(), id_len);
        r.token_ids = read_ids(in);
        if (r.token_ids.empty() || r.token_ids.front() != kCls) {
            throw std::runtime_error("dataset: record '" + r.id + "' does not begin with [CLS]");
        }
        const auto m = read_pod<std::uint32_t>(in);
        if (static_cast<int>(m) > ds.header.max_frames) {
            throw std::runtime_error("dataset: record '" + r.id + "' has too many frames");
        }
        std::vector<double> feats(static_cast<std::size_t>(m) * D);
        for (auto& v : feats) v = read_pod<double>(in);
        r.frame_features = Tensor::from({static_cast<int>(m), D}, std::move(feats));
        r.plot_label = read_pod<std::int32_t>(in);
        r.top_cate = read_pod<std::int32_t>(in);
        r.leaf_cate = read_pod<std::int32_t>(in);
        if (read_pod<std::uint8_t>(in)) {
            r.product_image.resize(static_cast<std::size_t>(D));
            for (auto& v : r.product_image) v = read_pod<double>(in);
        }
        r.abstract_token_ids = read_ids(in);
        ds.records.push_back(std::move(r));
    }
    return ds;
}

int count_real_tokens(const std::vector<int>& token_ids) {
    int n = 0;
    for (int id : token_ids)
        if (id != kPad && id != kCls && id != kSep) ++n;
    return n;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
    if (spec.vocab_size < 4 + spec.topics || spec.topics < 1 || spec.num_records < 1) {
        throw std::runtime_error("synthetic spec: need vocab_size >= 4 + topics and positive counts");
    }
    if (spec.max_tokens < 5 || spec.max_frames < 2) {
        throw std::runtime_error("synthetic spec: max_tokens >= 5 and max_frames >= 2 required");
    }
    Dataset ds;
    ds.header.vocab_size = spec.vocab_size;
    ds.header.frame_feature_dim = spec.frame_feature_dim;
    ds.header.max_tokens = spec.max_tokens;
    ds.header.max_frames = spec.max_frames;

    Rng master(spec.seed);
    // Topic centroids in feature space.
    std::vector<std::vector<double>> centroids(static_cast<std::size_t>(spec.topics));
    Rng crng = master.derive(1);
    for (auto& c : centroids) {
        c.resize(static_cast<std::size_t>(spec.frame_feature_dim));
        for (auto& v : c) v = crng.normal();
    }
    const int content_vocab = spec.vocab_size - 4;
    const int block = std::max(1, content_vocab / spec.topics);

    const auto topic_sentence = [&](Rng& rng, int topic, int len) {
        std::vector<int> ids;
        ids.push_back(kCls);
        for (int i = 0; i < len; ++i) {
            const int off = topic * block + rng.uniform_int(block);
            ids.push_back(4 + (off % content_vocab));
        }
        ids.push_back(kSep);
        return ids;
    };

    for (int r = 0; r < spec.num_records; ++r) {
        Rng rng = master.derive(1000 + static_cast<std::uint64_t>(r));
        VideoTextRecord rec;
        rec.id = "rec-" + std::to_string(r);
        const int topic = r % spec.topics;
        const int content_len = 3 + rng.uniform_int(spec.max_tokens - 2 - 3 + 1);
        rec.token_ids = topic_sentence(rng, topic, content_len);
        const int m = 2 + rng.uniform_int(spec.max_frames - 1);
        std::vector<double> feats(static_cast<std::size_t>(m) * spec.frame_feature_dim);
        for (int f = 0; f < m; ++f)
            for (int c = 0; c < spec.frame_feature_dim; ++c)
                feats[static_cast<std::size_t>(f) * spec.frame_feature_dim + c] =
                    centroids[static_cast<std::size_t>(topic)][static_cast<std::size_t>(c)] +
                    spec.noise * rng.normal();
        rec.frame_features = Tensor::from({m, spec.frame_feature_dim}, std::move(feats));
        rec.plot_label = topic;
        rec.top_cate = topic;
        rec.leaf_cate = topic;
        rec.product_image.resize(static_cast<std::size_t>(spec.frame_feature_dim));
        for (int c = 0; c < spec.frame_feature_dim; ++c)
            rec.product_image[static_cast<std::size_t>(c)] =
                centroids[static_cast<std::size_t>(topic)][static_cast<std::size_t>(c)] +
                spec.noise * rng.normal();
        const int abs_len = 3 + rng.uniform_int(spec.max_tokens - 2 - 3 + 1);
        rec.abstract_token_ids = topic_sentence(rng, topic, abs_len);
        ds.records.push_back(std::move(rec));
    }
    ds.header.record_count = static_cast<int>(ds.records.size());
    return ds;
}

SyntheticSpec parse_synthetic_spec_text(const std::string& text) {
    SyntheticSpec spec;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t\r");
        line = line.substr(b, e - b + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("synthetic spec line " + std::to_string(lineno) + ": expected key=value");
        }
        auto strip = [](std::string s) {
            const auto sb = s.find_first_not_of(" \t");
            if (sb == std::string::npos) return std::string();
            const auto se = s.find_last_not_of(" \t");
            return s.substr(sb, se - sb + 1);
        };
        const std::string key = strip(line.substr(0, eq));
        const std::string value = strip(line.substr(eq + 1));
        try {
            if (key == "vocab_size") spec.vocab_size = std::stoi(value);
            else if (key == "num_records") spec.num_records = std::stoi(value);
            else if (key == "topics") spec.topics = std::stoi(value);
            else if (key == "noise") spec.noise = std::stod(value);
            else if (key == "seed") spec.seed = std::stoull(value);
            else if (key == "frame_feature_dim") spec.frame_feature_dim = std::stoi(value);
            else if (key == "max_tokens") spec.max_tokens = std::stoi(value);
            else if (key == "max_frames") spec.max_frames = std::stoi(value);
            else throw std::runtime_error("synthetic spec line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw std::runtime_error("synthetic spec line " + std::to_string(lineno) + ": bad value '" + value + "'");
        } catch (const std::out_of_range&) {
            throw std::runtime_error("synthetic spec line " + std::to_string(lineno) + ": bad value '" + value + "'");
        }
    }
    return spec;
}

SyntheticSpec load_synthetic_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open synthetic spec: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_synthetic_spec_text(buf.str());
}

}   // namespace vlpt
