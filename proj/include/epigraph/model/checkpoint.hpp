#pragma once

#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "epigraph/model/model.hpp"

namespace epigraph::model {

inline constexpr const char* kCheckpointTag = "epigraph-checkpoint v1";

// Exact text form of a double: hexadecimal significand and binary exponent.
inline std::string hex_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::hex);
    return std::string(buf, r.ptr);
}

inline double parse_hex_double(std::string_view s) {
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v, std::chars_format::hex);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
        throw ArtifactError("checkpoint: malformed number '" + std::string(s) + "'");
    return v;
}

// Everything needed to rebuild a trained model and its preprocessing.
struct Checkpoint {
    ModelConfig model;
    data::FrameOptions frame;
    std::uint64_t seed = 0;
    std::vector<std::string> feature_names;
    data::ScalerState feature_scaler;
    data::MinMax target_scaler;
    std::vector<graph::Edge> edges;
    std::vector<NamedTensor> params;
    std::map<std::string, std::string> metadata;  // training summary, free-form
};

inline Checkpoint capture(const EpiGraphModel& model, const data::FrameOptions& frame, std::uint64_t seed,
                          const data::ScalerState& feature_scaler, const data::MinMax& target_scaler) {
    Checkpoint c;
    c.model = model.config();
    c.frame = frame;
    c.seed = seed;
    c.feature_names = model.spatial().graph().node_names;
    c.feature_scaler = feature_scaler;
    c.target_scaler = target_scaler;
    c.edges = model.spatial().graph().edges();
    for (const auto& e : model.params().entries()) c.params.push_back({e.name, e.tensor.detach()});
    return c;
}

// Rebuilds the architecture and copies every parameter by name.
inline EpiGraphModel restore(const Checkpoint& c) {
    EpiGraphModel model(graph::graph_from_edges(c.feature_names, c.edges), c.model, c.seed);
    const auto& entries = model.params().entries();
    if (entries.size() != c.params.size())
        throw ArtifactError("checkpoint holds " + std::to_string(c.params.size()) + " parameters, model expects " +
                            std::to_string(entries.size()));
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& src = c.params[i];
        if (src.name != entries[i].name || src.tensor.shape() != entries[i].tensor.shape())
            throw ArtifactError("checkpoint parameter '" + src.name + "' " + to_string(src.tensor.shape()) +
                                " does not match '" + entries[i].name + "' " + to_string(entries[i].tensor.shape()));
        Tensor dst = entries[i].tensor;
        auto v = dst.mutable_values();
        std::copy(src.tensor.vec().begin(), src.tensor.vec().end(), v.begin());
    }
    return model;
}

namespace detail {

inline void write_config(std::ostream& out, const Checkpoint& c) {
    const auto& g = c.model.graph;
    const auto& t = c.model.transformer;
    out << "window = " << c.model.window << "\n"
        << "horizon = " << c.model.horizon << "\n"
        << "d_node = " << g.d_node << "\n"
        << "gat_layers = " << g.gat_layers << "\n"
        << "gat_heads = " << g.gat_heads << "\n"
        << "gat_head_dim = " << g.gat_head_dim << "\n"
        << "leaky_slope = " << hex_double(g.slope) << "\n"
        << "keep_fraction = " << hex_double(g.keep_fraction) << "\n"
        << "d_model = " << t.d_model << "\n"
        << "n_heads = " << t.n_heads << "\n"
        << "d_ff = " << t.d_ff << "\n"
        << "dropout = " << hex_double(t.dropout) << "\n"
        << "encoder_layers = " << t.encoder_layers << "\n"
        << "decoder_layers = " << t.decoder_layers << "\n"
        << "target = " << c.frame.target << "\n"
        << "max_lag = " << c.frame.max_lag << "\n"
        << "train_end_week = " << c.frame.train_end_week << "\n"
        << "seed = " << c.seed << "\n";
}

class Reader {
public:
    explicit Reader(std::istream& in) : in_(in) {}

    std::string line() {
        std::string s;
        if (!std::getline(in_, s)) throw ArtifactError("checkpoint: unexpected end of file");
        ++line_no_;
        return s;
    }

    std::size_t section(const std::string& name) {
        const std::string s = line();
        const std::string prefix = "[" + name + "] ";
        if (s.rfind(prefix, 0) != 0) fail("expected section [" + name + "]");
        return to_size(s.substr(prefix.size()));
    }

    std::size_t to_size(const std::string& s) {
        std::size_t v = 0;
        const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
        if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) fail("bad count '" + s + "'");
        return v;
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw ArtifactError("checkpoint line " + std::to_string(line_no_) + ": " + what);
    }

private:
    std::istream& in_;
    std::size_t line_no_ = 0;
};

inline std::vector<std::string> split_words(const std::string& s) {
    std::istringstream is(s);
    std::vector<std::string> out;
    for (std::string w; is >> w;) out.push_back(w);
    return out;
}

}  // namespace detail

inline void save_checkpoint(std::ostream& out, const Checkpoint& c) {
    out << kCheckpointTag << "\n";
    std::ostringstream cfg;
    detail::write_config(cfg, c);
    const std::string cfg_text = cfg.str();
    out << "[config] " << std::count(cfg_text.begin(), cfg_text.end(), '\n') << "\n" << cfg_text;
    out << "[metadata] " << c.metadata.size() << "\n";
    for (const auto& [k, v] : c.metadata) out << k << " = " << v << "\n";
    out << "[features] " << c.feature_names.size() << "\n";
    for (const auto& n : c.feature_names) out << n << "\n";
    out << "[feature_scaler] " << c.feature_scaler.ranges.size() << "\n";
    for (const auto& r : c.feature_scaler.ranges) out << hex_double(r.min) << " " << hex_double(r.max) << "\n";
    out << "[target_scaler] 1\n" << hex_double(c.target_scaler.min) << " " << hex_double(c.target_scaler.max) << "\n";
    out << "[edges] " << c.edges.size() << "\n";
    for (const auto& e : c.edges) out << e.u << " " << e.v << " " << hex_double(e.weight) << "\n";
    out << "[params] " << c.params.size() << "\n";
    for (const auto& p : c.params) {
        out << p.name << " " << p.tensor.rank();
        for (auto d : p.tensor.shape()) out << " " << d;
        out << "\n";
        for (std::size_t i = 0; i < p.tensor.size(); ++i) out << (i ? " " : "") << hex_double(p.tensor[i]);
        out << "\n";
    }
    out << "[end] 0\n";
}

inline Checkpoint load_checkpoint(std::istream& in) {
    detail::Reader rd(in);
    if (rd.line() != kCheckpointTag) rd.fail("not an epigraph checkpoint (missing format tag)");
    Checkpoint c;
    std::map<std::string, std::string> cfg;
    for (std::size_t n = rd.section("config"); n > 0; --n) {
        const std::string s = rd.line();
        const auto eq = s.find(" = ");
        if (eq == std::string::npos) rd.fail("bad config line");
        cfg[s.substr(0, eq)] = s.substr(eq + 3);
    }
    auto get = [&](const char* key) -> const std::string& {
        const auto it = cfg.find(key);
        if (it == cfg.end()) rd.fail(std::string("config key '") + key + "' missing");
        return it->second;
    };
    auto size = [&](const char* key) { return rd.to_size(get(key)); };
    c.model.window = size("window");
    c.model.horizon = size("horizon");
    c.model.graph.d_node = size("d_node");
    c.model.graph.gat_layers = size("gat_layers");
    c.model.graph.gat_heads = size("gat_heads");
    c.model.graph.gat_head_dim = size("gat_head_dim");
    c.model.graph.slope = parse_hex_double(get("leaky_slope"));
    c.model.graph.keep_fraction = parse_hex_double(get("keep_fraction"));
    c.model.transformer.d_model = c.model.graph.d_model = size("d_model");
    c.model.transformer.n_heads = size("n_heads");
    c.model.transformer.d_ff = size("d_ff");
    c.model.transformer.dropout = parse_hex_double(get("dropout"));
    c.model.transformer.encoder_layers = size("encoder_layers");
    c.model.transformer.decoder_layers = size("decoder_layers");
    c.frame.target = get("target");
    c.frame.max_lag = size("max_lag");
    c.frame.train_end_week = size("train_end_week");
    c.seed = std::stoull(get("seed"));
    for (std::size_t n = rd.section("metadata"); n > 0; --n) {
        const std::string s = rd.line();
        const auto eq = s.find(" = ");
        if (eq == std::string::npos) rd.fail("bad metadata line");
        c.metadata[s.substr(0, eq)] = s.substr(eq + 3);
    }
    for (std::size_t n = rd.section("features"); n > 0; --n) c.feature_names.push_back(rd.line());
    const std::size_t ns = rd.section("feature_scaler");
    if (ns != c.feature_names.size()) rd.fail("scaler count does not match feature count");
    c.feature_scaler.names = c.feature_names;
    for (std::size_t n = 0; n < ns; ++n) {
        const auto w = detail::split_words(rd.line());
        if (w.size() != 2) rd.fail("bad scaler line");
        c.feature_scaler.ranges.push_back({parse_hex_double(w[0]), parse_hex_double(w[1])});
    }
    rd.section("target_scaler");
    {
        const auto w = detail::split_words(rd.line());
        if (w.size() != 2) rd.fail("bad target scaler line");
        c.target_scaler = {parse_hex_double(w[0]), parse_hex_double(w[1])};
    }
    for (std::size_t n = rd.section("edges"); n > 0; --n) {
        const auto w = detail::split_words(rd.line());
        if (w.size() != 3) rd.fail("bad edge line");
        c.edges.push_back({rd.to_size(w[0]), rd.to_size(w[1]), parse_hex_double(w[2])});
    }
    for (std::size_t n = rd.section("params"); n > 0; --n) {
        const auto head = detail::split_words(rd.line());
        if (head.size() < 2) rd.fail("bad parameter header");
        const std::size_t rank = rd.to_size(head[1]);
        if (head.size() != 2 + rank) rd.fail("parameter shape does not match rank");
        Shape shape;
        for (std::size_t i = 0; i < rank; ++i) shape.push_back(rd.to_size(head[2 + i]));
        const auto words = detail::split_words(rd.line());
        if (words.size() != element_count(shape)) rd.fail("parameter '" + head[0] + "' has wrong value count");
        std::vector<double> v;
        v.reserve(words.size());
        for (const auto& w : words) v.push_back(parse_hex_double(w));
        c.params.push_back({head[0], Tensor(std::move(shape), std::move(v))});
    }
    rd.section("end");
    return c;
}

inline void save_checkpoint_file(const std::string& path, const Checkpoint& c) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ArtifactError("cannot write checkpoint " + path);
    save_checkpoint(out, c);
}

inline Checkpoint load_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArtifactError("checkpoint not found: " + path);
    return load_checkpoint(in);
}

}  // namespace epigraph::model
