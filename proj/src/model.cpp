#include "scdpo/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "scdpo/detail/math.hpp"
#include "scdpo/rng.hpp"
#include "scdpo/sha256.hpp"

namespace scdpo::model {

using nlohmann::json;

namespace {

constexpr const char* kMagic = "scdpo-checkpoint v1";
constexpr float kInitStd = 0.08f;

struct TensorSpec {
    std::string name;
    int rows;
    int cols;
    bool gaussian;  // false: layer-norm gain/bias
    float fill;     // used when !gaussian
};

std::vector<TensorSpec> layout(const ModelConfig& c) {
    std::vector<TensorSpec> specs;
    auto gauss = [&](std::string name, int r, int co) { specs.push_back({std::move(name), r, co, true, 0.f}); };
    auto fixed = [&](std::string name, int r, int co, float v) { specs.push_back({std::move(name), r, co, false, v}); };
    gauss("tok_embed", c.vocab_size, c.embed_dim);
    gauss("pos_embed", c.context_length, c.embed_dim);
    for (int l = 0; l < c.layer_count; ++l) {
        std::string p = "l" + std::to_string(l) + ".";
        fixed(p + "ln1.g", 1, c.embed_dim, 1.f);
        fixed(p + "ln1.b", 1, c.embed_dim, 0.f);
        gauss(p + "wq", c.embed_dim, c.embed_dim);
        gauss(p + "wk", c.embed_dim, c.embed_dim);
        gauss(p + "wv", c.embed_dim, c.embed_dim);
        gauss(p + "wo", c.embed_dim, c.embed_dim);
        fixed(p + "ln2.g", 1, c.embed_dim, 1.f);
        fixed(p + "ln2.b", 1, c.embed_dim, 0.f);
        gauss(p + "ff1", c.embed_dim, c.feedforward_dim);
        gauss(p + "ff2", c.feedforward_dim, c.embed_dim);
    }
    fixed("lnf.g", 1, c.embed_dim, 1.f);
    fixed("lnf.b", 1, c.embed_dim, 0.f);
    gauss("head", c.embed_dim, c.vocab_size);
    return specs;
}

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size <= 0 || context_length <= 0 || embed_dim <= 0 || layer_count <= 0 || head_count <= 0 ||
        feedforward_dim <= 0) {
        throw std::invalid_argument("model config: all dimensions must be positive");
    }
    if (embed_dim % head_count != 0) throw std::invalid_argument("model config: embed_dim % head_count != 0");
}

const NamedTensor& Parameters::tensor(const std::string& name) const {
    return tensors[static_cast<std::size_t>(tensor_index(name))];
}

NamedTensor& Parameters::tensor(const std::string& name) {
    return tensors[static_cast<std::size_t>(tensor_index(name))];
}

int Parameters::tensor_index(const std::string& name) const {
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        if (tensors[i].name == name) return static_cast<int>(i);
    }
    throw std::out_of_range("parameters: no tensor named " + name);
}

std::size_t Parameters::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
}

Parameters init_parameters(const ModelConfig& config, const Vocab& vocab, std::uint64_t seed, Role role) {
    config.validate();
    if (config.vocab_size != vocab.size()) throw std::invalid_argument("init: config vocab_size != vocab size");
    Parameters p;
    p.config = config;
    p.vocab = vocab;
    p.creation_seed = seed;
    p.role = role;
    RandomStream rng = RandomStream::keyed(seed, 0x696e6974ULL);
    for (const TensorSpec& spec : layout(config)) {
        NamedTensor t;
        t.name = spec.name;
        t.rows = spec.rows;
        t.cols = spec.cols;
        t.values.resize(static_cast<std::size_t>(spec.rows) * static_cast<std::size_t>(spec.cols));
        if (spec.gaussian) {
            for (float& v : t.values) v = static_cast<float>(rng.next_gaussian()) * kInitStd;
        } else {
            for (float& v : t.values) v = spec.fill;
        }
        p.tensors.push_back(std::move(t));
    }
    return p;
}

namespace {

void append_le32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::string payload_bytes(const Parameters& params) {
    std::string bytes;
    std::size_t n = 0;
    for (const auto& t : params.tensors) n += t.size();
    bytes.reserve(n * 4);
    for (const auto& t : params.tensors) {
        for (float v : t.values) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            append_le32(bytes, bits);
        }
    }
    return bytes;
}

}  // namespace

void save_checkpoint(const Parameters& params, const std::string& path) {
    json tensors = json::array();
    for (const auto& t : params.tensors) tensors.push_back({t.name, t.rows, t.cols});
    json header{{"config",
                 {{"vocab_size", params.config.vocab_size},
                  {"context_length", params.config.context_length},
                  {"embed_dim", params.config.embed_dim},
                  {"layer_count", params.config.layer_count},
                  {"head_count", params.config.head_count},
                  {"feedforward_dim", params.config.feedforward_dim}}},
                {"vocab", params.vocab.symbols()},
                {"creation_seed", params.creation_seed},
                {"tensors", tensors}};
    std::string payload = payload_bytes(params);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out << kMagic << '\n' << header.dump() << '\n' << "payload " << payload.size() << '\n';
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Parameters load_checkpoint(const std::string& path, Role role) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::string magic;
    if (!std::getline(in, magic)) throw CheckpointError(CheckpointError::Kind::CorruptHeader, "missing magic line");
    if (magic != kMagic) {
        if (magic.rfind("scdpo-checkpoint", 0) == 0) {
            throw CheckpointError(CheckpointError::Kind::VersionMismatch, "unsupported checkpoint version: " + magic);
        }
        throw CheckpointError(CheckpointError::Kind::CorruptHeader, "not a checkpoint file");
    }
    std::string header_line;
    if (!std::getline(in, header_line)) {
        throw CheckpointError(CheckpointError::Kind::CorruptHeader, "missing header");
    }
    json header;
    try {
        header = json::parse(header_line);
    } catch (const json::exception& e) {
        throw CheckpointError(CheckpointError::Kind::CorruptHeader, std::string("bad header json: ") + e.what());
    }

    Parameters p;
    try {
        const json& c = header.at("config");
        p.config.vocab_size = c.at("vocab_size").get<int>();
        p.config.context_length = c.at("context_length").get<int>();
        p.config.embed_dim = c.at("embed_dim").get<int>();
        p.config.layer_count = c.at("layer_count").get<int>();
        p.config.head_count = c.at("head_count").get<int>();
        p.config.feedforward_dim = c.at("feedforward_dim").get<int>();
        p.vocab = Vocab(header.at("vocab").get<std::vector<std::string>>());
        p.creation_seed = header.at("creation_seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw CheckpointError(CheckpointError::Kind::CorruptHeader, std::string("incomplete header: ") + e.what());
    }
    p.role = role;
    try {
        p.config.validate();
    } catch (const std::invalid_argument& e) {
        throw CheckpointError(CheckpointError::Kind::ShapeMismatch, e.what());
    }
    if (p.vocab.size() != p.config.vocab_size) {
        throw CheckpointError(CheckpointError::Kind::ShapeMismatch, "vocab size disagrees with config");
    }

    auto specs = layout(p.config);
    const json& tensors = header.at("tensors");
    if (tensors.size() != specs.size()) {
        throw CheckpointError(CheckpointError::Kind::ShapeMismatch, "tensor list does not match config layout");
    }
    std::size_t total = 0;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const json& t = tensors[i];
        if (t.at(0).get<std::string>() != specs[i].name || t.at(1).get<int>() != specs[i].rows ||
            t.at(2).get<int>() != specs[i].cols) {
            throw CheckpointError(CheckpointError::Kind::ShapeMismatch,
                                  "tensor " + std::to_string(i) + " does not match config layout");
        }
        total += static_cast<std::size_t>(specs[i].rows) * static_cast<std::size_t>(specs[i].cols);
    }

    std::string payload_line;
    if (!std::getline(in, payload_line) || payload_line.rfind("payload ", 0) != 0) {
        throw CheckpointError(CheckpointError::Kind::CorruptPayload, "missing payload marker");
    }
    std::size_t declared = std::strtoull(payload_line.c_str() + 8, nullptr, 10);
    if (declared != total * 4) {
        throw CheckpointError(CheckpointError::Kind::ShapeMismatch, "payload size disagrees with tensor shapes");
    }
    std::string bytes(declared, '\0');
    in.read(bytes.data(), static_cast<std::streamsize>(declared));
    if (static_cast<std::size_t>(in.gcount()) != declared) {
        throw CheckpointError(CheckpointError::Kind::CorruptPayload, "payload truncated");
    }

    std::size_t off = 0;
    for (const TensorSpec& spec : specs) {
        NamedTensor t;
        t.name = spec.name;
        t.rows = spec.rows;
        t.cols = spec.cols;
        t.values.resize(static_cast<std::size_t>(spec.rows) * static_cast<std::size_t>(spec.cols));
        for (float& v : t.values) {
            auto b = [&](std::size_t i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + i])); };
            std::uint32_t bits = b(0) | (b(1) << 8) | (b(2) << 16) | (b(3) << 24);
            std::memcpy(&v, &bits, 4);
            off += 4;
        }
        p.tensors.push_back(std::move(t));
    }
    return p;
}

std::string parameters_hash(const Parameters& params) {
    return Sha256::of_string(payload_bytes(params));
}

Decoder::Decoder(const Parameters& params) : params_(params) {
    params_.config.validate();
    auto data = [&](const std::string& name) { return params_.tensor(name).values.data(); };
    tok_embed_ = data("tok_embed");
    pos_embed_ = data("pos_embed");
    lnf_g_ = data("lnf.g");
    lnf_b_ = data("lnf.b");
    head_ = data("head");
    for (int l = 0; l < params_.config.layer_count; ++l) {
        std::string p = "l" + std::to_string(l) + ".";
        layers_.push_back({data(p + "ln1.g"), data(p + "ln1.b"), data(p + "wq"), data(p + "wk"), data(p + "wv"),
                           data(p + "wo"), data(p + "ln2.g"), data(p + "ln2.b"), data(p + "ff1"), data(p + "ff2")});
    }
    key_cache_.resize(static_cast<std::size_t>(params_.config.layer_count));
    value_cache_.resize(static_cast<std::size_t>(params_.config.layer_count));
    reset();
}

void Decoder::reset() {
    length_ = 0;
    for (auto& c : key_cache_) c.clear();
    for (auto& c : value_cache_) c.clear();
    logits_.assign(static_cast<std::size_t>(params_.config.vocab_size), 0.0);
}

void Decoder::push(TokenId id) {
    const ModelConfig& c = params_.config;
    if (id < 0 || id >= c.vocab_size) throw std::out_of_range("decoder: token id out of range");
    if (length_ >= c.context_length) {
        throw ContextOverflowError("decoder: sequence exceeds context_length");
    }
    const int t = length_;
    const int d = c.embed_dim;

    std::vector<double> x(static_cast<std::size_t>(d));
    const float* tok = tok_embed_ + static_cast<std::size_t>(id) * static_cast<std::size_t>(d);
    const float* pos = pos_embed_ + static_cast<std::size_t>(t) * static_cast<std::size_t>(d);
    for (int i = 0; i < d; ++i) x[static_cast<std::size_t>(i)] = static_cast<double>(tok[i]) + static_cast<double>(pos[i]);

    std::vector<double> h(static_cast<std::size_t>(d)), q(static_cast<std::size_t>(d)), k(static_cast<std::size_t>(d)),
        v(static_cast<std::size_t>(d)), attn(static_cast<std::size_t>(d)), proj(static_cast<std::size_t>(d));
    std::vector<double> ff_in(static_cast<std::size_t>(c.feedforward_dim));

    for (int l = 0; l < c.layer_count; ++l) {
        const LayerWeights& w = layers_[static_cast<std::size_t>(l)];
        detail::layer_norm_row(x.data(), w.ln1_g, w.ln1_b, d, h.data());

        detail::matvec(h.data(), w.wq, d, d, q.data());
        detail::matvec(h.data(), w.wk, d, d, k.data());
        detail::matvec(h.data(), w.wv, d, d, v.data());

        auto& kc = key_cache_[static_cast<std::size_t>(l)];
        auto& vc = value_cache_[static_cast<std::size_t>(l)];
        kc.insert(kc.end(), k.begin(), k.end());
        vc.insert(vc.end(), v.begin(), v.end());

        detail::attention_row(q.data(), kc.data(), vc.data(), t + 1, d, c.head_count, attn.data());
        detail::matvec(attn.data(), w.wo, d, d, proj.data());
        for (int i = 0; i < d; ++i) x[static_cast<std::size_t>(i)] += proj[static_cast<std::size_t>(i)];

        detail::layer_norm_row(x.data(), w.ln2_g, w.ln2_b, d, h.data());
        detail::matvec(h.data(), w.ff1, d, c.feedforward_dim, ff_in.data());
        for (double& u : ff_in) u = detail::gelu(u);
        detail::matvec(ff_in.data(), w.ff2, c.feedforward_dim, d, proj.data());
        for (int i = 0; i < d; ++i) x[static_cast<std::size_t>(i)] += proj[static_cast<std::size_t>(i)];
    }

    detail::layer_norm_row(x.data(), lnf_g_, lnf_b_, d, h.data());
    detail::matvec(h.data(), head_, d, c.vocab_size, logits_.data());
    ++length_;
}

std::vector<double> Decoder::log_softmax() const {
    std::vector<double> out(logits_.size());
    double mx = logits_[0];
    for (double g : logits_) mx = g > mx ? g : mx;
    double denom = 0.0;
    for (double g : logits_) denom += std::exp(g - mx);
    double lse = std::log(denom);
    for (std::size_t i = 0; i < logits_.size(); ++i) out[i] = logits_[i] - mx - lse;
    return out;
}

double log_softmax_pick(const std::vector<double>& logits, TokenId id) {
    double mx = logits[0];
    for (double g : logits) mx = g > mx ? g : mx;
    double denom = 0.0;
    for (double g : logits) denom += std::exp(g - mx);
    return logits[static_cast<std::size_t>(id)] - mx - std::log(denom);
}

std::vector<double> logits_next(const Parameters& params, const TokenSeq& prefix) {
    if (prefix.empty()) throw std::invalid_argument("logits_next: empty prefix");
    if (static_cast<int>(prefix.size()) > params.config.context_length) {
        throw ContextOverflowError("logits_next: prefix exceeds context_length");
    }
    Decoder dec(params);
    for (TokenId id : prefix) dec.push(id);
    return dec.logits();
}

std::vector<double> token_logprobs(const Parameters& params, const TokenSeq& context, const TokenSeq& target) {
    if (context.empty()) throw std::invalid_argument("token_logprobs: context must be non-empty");
    if (target.empty()) throw std::invalid_argument("token_logprobs: target must be non-empty");
    if (static_cast<int>(context.size() + target.size()) > params.config.context_length) {
        throw ContextOverflowError("token_logprobs: sequence exceeds context_length");
    }
    TokenSeq full;
    full.reserve(context.size() + target.size());
    full.insert(full.end(), context.begin(), context.end());
    full.insert(full.end(), target.begin(), target.end());

    std::vector<double> out;
    out.reserve(target.size());
    Decoder dec(params);
    for (std::size_t i = 0; i + 1 < full.size(); ++i) {
        dec.push(full[i]);
        if (i + 1 >= context.size()) out.push_back(log_softmax_pick(dec.logits(), full[i + 1]));
    }
    return out;
}

double sequence_logprob(const Parameters& params, const TokenSeq& context, const TokenSeq& target) {
    double sum = 0.0;
    for (double lp : token_logprobs(params, context, target)) sum += lp;
    return sum;
}

}  // namespace scdpo::model
