#include "scdpo/tape.hpp"

#include <cmath>

#include "scdpo/detail/math.hpp"

namespace scdpo::diff {

GradientVector GradientVector::zeros_like(const model::Parameters& params) {
    GradientVector g;
    g.tensors.reserve(params.tensors.size());
    for (const auto& t : params.tensors) g.tensors.emplace_back(t.size(), 0.0);
    return g;
}

void GradientVector::accumulate(const GradientVector& other, double scale) {
    for (std::size_t t = 0; t < tensors.size(); ++t) {
        const auto& src = other.tensors[t];
        auto& dst = tensors[t];
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
    }
}

void GradientVector::scale(double s) {
    for (auto& t : tensors) {
        for (double& v : t) v *= s;
    }
}

bool GradientVector::all_finite() const {
    for (const auto& t : tensors) {
        for (double v : t) {
            if (!std::isfinite(v)) return false;
        }
    }
    return true;
}

Tape::Tape(const model::Parameters& params) : params_(params) {}

Tape::NodeId Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

Tape::NodeId Tape::param(const std::string& name) {
    Node n;
    n.op = Op::Param;
    n.param_index = params_.tensor_index(name);
    const auto& t = params_.tensors[static_cast<std::size_t>(n.param_index)];
    n.val.rows = t.rows;
    n.val.cols = t.cols;
    n.val.v.resize(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) n.val.v[i] = static_cast<double>(t.values[i]);
    return push(std::move(n));
}

Tape::NodeId Tape::constant(int rows, int cols, std::vector<double> values) {
    if (static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) != values.size()) {
        throw TapeError("constant: shape does not match value count");
    }
    Node n;
    n.op = Op::Constant;
    n.val.rows = rows;
    n.val.cols = cols;
    n.val.v = std::move(values);
    return push(std::move(n));
}

Tape::NodeId Tape::gather_rows(NodeId table, std::vector<int> rows) {
    const Value& t = val(table);
    Node n;
    n.op = Op::GatherRows;
    n.a = table;
    n.index = std::move(rows);
    n.val.rows = static_cast<int>(n.index.size());
    n.val.cols = t.cols;
    n.val.v.resize(n.index.size() * static_cast<std::size_t>(t.cols));
    for (std::size_t r = 0; r < n.index.size(); ++r) {
        int src = n.index[r];
        if (src < 0 || src >= t.rows) throw TapeError("gather_rows: row out of range");
        for (int c = 0; c < t.cols; ++c) {
            n.val.v[r * static_cast<std::size_t>(t.cols) + static_cast<std::size_t>(c)] = t.at(src, c);
        }
    }
    return push(std::move(n));
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
    const Value& va = val(a);
    const Value& vb = val(b);
    if (va.rows != vb.rows || va.cols != vb.cols) throw TapeError("add: shape mismatch");
    Node n;
    n.op = Op::Add;
    n.a = a;
    n.b = b;
    n.val.rows = va.rows;
    n.val.cols = va.cols;
    n.val.v.resize(va.v.size());
    for (std::size_t i = 0; i < va.v.size(); ++i) n.val.v[i] = va.v[i] + vb.v[i];
    return push(std::move(n));
}

Tape::NodeId Tape::mul(NodeId a, NodeId b) {
    const Value& va = val(a);
    const Value& vb = val(b);
    if (va.rows != vb.rows || va.cols != vb.cols) throw TapeError("mul: shape mismatch");
    Node n;
    n.op = Op::Mul;
    n.a = a;
    n.b = b;
    n.val.rows = va.rows;
    n.val.cols = va.cols;
    n.val.v.resize(va.v.size());
    for (std::size_t i = 0; i < va.v.size(); ++i) n.val.v[i] = va.v[i] * vb.v[i];
    return push(std::move(n));
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
    const Value& va = val(a);
    const Value& vb = val(b);
    if (va.cols != vb.rows) throw TapeError("matmul: inner dimensions disagree");
    Node n;
    n.op = Op::MatMul;
    n.a = a;
    n.b = b;
    n.val.rows = va.rows;
    n.val.cols = vb.cols;
    n.val.v.assign(static_cast<std::size_t>(va.rows) * static_cast<std::size_t>(vb.cols), 0.0);
    // Contributions enter out[i][j] in ascending k order, matching detail::matvec.
    for (int i = 0; i < va.rows; ++i) {
        const double* arow = va.v.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(va.cols);
        double* orow = n.val.v.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(vb.cols);
        for (int k = 0; k < va.cols; ++k) {
            const double aik = arow[k];
            const double* brow = vb.v.data() + static_cast<std::size_t>(k) * static_cast<std::size_t>(vb.cols);
            for (int j = 0; j < vb.cols; ++j) orow[j] += aik * brow[j];
        }
    }
    return push(std::move(n));
}

Tape::NodeId Tape::layer_norm(NodeId x, NodeId gamma, NodeId beta) {
    const Value& vx = val(x);
    const Value& vg = val(gamma);
    const Value& vb = val(beta);
    if (vg.rows != 1 || vb.rows != 1 || vg.cols != vx.cols || vb.cols != vx.cols) {
        throw TapeError("layer_norm: gain/bias must be [1, cols]");
    }
    Node n;
    n.op = Op::LayerNorm;
    n.a = x;
    n.b = gamma;
    n.c = beta;
    n.val.rows = vx.rows;
    n.val.cols = vx.cols;
    n.val.v.resize(vx.v.size());
    n.saved.resize(2 * static_cast<std::size_t>(vx.rows));
    std::vector<float> g32(vg.v.begin(), vg.v.end());
    std::vector<float> b32(vb.v.begin(), vb.v.end());
    // gamma/beta come from float32 leaves, so the narrow-then-widen round trip
    // is exact and keeps this identical to the decoder's layer_norm_row.
    for (int r = 0; r < vx.rows; ++r) {
        detail::layer_norm_row(vx.v.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(vx.cols), g32.data(),
                               b32.data(), vx.cols,
                               n.val.v.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(vx.cols),
                               &n.saved[2 * static_cast<std::size_t>(r)], &n.saved[2 * static_cast<std::size_t>(r) + 1]);
    }
    return push(std::move(n));
}

Tape::NodeId Tape::gelu(NodeId x) {
    const Value& vx = val(x);
    Node n;
    n.op = Op::Gelu;
    n.a = x;
    n.val.rows = vx.rows;
    n.val.cols = vx.cols;
    n.val.v.resize(vx.v.size());
    for (std::size_t i = 0; i < vx.v.size(); ++i) n.val.v[i] = detail::gelu(vx.v[i]);
    return push(std::move(n));
}

Tape::NodeId Tape::causal_attention(NodeId q, NodeId k, NodeId v, int heads) {
    const Value& vq = val(q);
    const Value& vk = val(k);
    const Value& vv = val(v);
    if (vq.rows != vk.rows || vq.rows != vv.rows || vq.cols != vk.cols || vq.cols != vv.cols) {
        throw TapeError("causal_attention: shape mismatch");
    }
    if (heads <= 0 || vq.cols % heads != 0) throw TapeError("causal_attention: bad head count");
    Node n;
    n.op = Op::CausalAttention;
    n.a = q;
    n.b = k;
    n.c = v;
    n.heads = heads;
    n.val.rows = vq.rows;
    n.val.cols = vq.cols;
    n.val.v.resize(vq.v.size());
    std::size_t prob_count = 0;
    for (int i = 0; i < vq.rows; ++i) prob_count += static_cast<std::size_t>(heads) * static_cast<std::size_t>(i + 1);
    n.saved.resize(prob_count);
    std::size_t off = 0;
    for (int i = 0; i < vq.rows; ++i) {
        detail::attention_row(vq.v.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(vq.cols), vk.v.data(),
                              vv.v.data(), i + 1, vq.cols, heads,
                              n.val.v.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(vq.cols),
                              n.saved.data() + off);
        off += static_cast<std::size_t>(heads) * static_cast<std::size_t>(i + 1);
    }
    return push(std::move(n));
}

Tape::NodeId Tape::logprob_pick(NodeId logits, std::vector<int> positions, std::vector<TokenId> targets) {
    if (positions.size() != targets.size()) throw TapeError("logprob_pick: positions/targets size mismatch");
    if (positions.empty()) throw TapeError("logprob_pick: empty pick set");
    const Value& vl = val(logits);
    Node n;
    n.op = Op::LogProbPick;
    n.a = logits;
    n.index = std::move(positions);
    n.targets = std::move(targets);
    n.val.rows = static_cast<int>(n.index.size());
    n.val.cols = 1;
    n.val.v.resize(n.index.size());
    n.saved.resize(n.index.size() * static_cast<std::size_t>(vl.cols));
    for (std::size_t r = 0; r < n.index.size(); ++r) {
        int row = n.index[r];
        TokenId tgt = n.targets[r];
        if (row < 0 || row >= vl.rows) throw TapeError("logprob_pick: row out of range");
        if (tgt < 0 || tgt >= vl.cols) throw TapeError("logprob_pick: target out of range");
        const double* lrow = vl.v.data() + static_cast<std::size_t>(row) * static_cast<std::size_t>(vl.cols);
        double mx = lrow[0];
        for (int j = 1; j < vl.cols; ++j) mx = lrow[j] > mx ? lrow[j] : mx;
        double denom = 0.0;
        double* prow = n.saved.data() + r * static_cast<std::size_t>(vl.cols);
        for (int j = 0; j < vl.cols; ++j) {
            double e = std::exp(lrow[j] - mx);
            prow[j] = e;
            denom += e;
        }
        for (int j = 0; j < vl.cols; ++j) prow[j] /= denom;
        n.val.v[r] = lrow[tgt] - mx - std::log(denom);
    }
    return push(std::move(n));
}

Tape::NodeId Tape::sum(NodeId x) {
    const Value& vx = val(x);
    Node n;
    n.op = Op::Sum;
    n.a = x;
    n.val.rows = 1;
    n.val.cols = 1;
    double s = 0.0;
    for (double u : vx.v) s += u;
    n.val.v = {s};
    return push(std::move(n));
}

Tape::NodeId Tape::affine(NodeId x, double mul, double shift) {
    const Value& vx = val(x);
    Node n;
    n.op = Op::Affine;
    n.a = x;
    n.mul = mul;
    n.shift = shift;
    n.val.rows = vx.rows;
    n.val.cols = vx.cols;
    n.val.v.resize(vx.v.size());
    for (std::size_t i = 0; i < vx.v.size(); ++i) n.val.v[i] = mul * vx.v[i] + shift;
    return push(std::move(n));
}

Tape::NodeId Tape::sub(NodeId a, NodeId b) {
    const Value& va = val(a);
    const Value& vb = val(b);
    if (va.rows != vb.rows || va.cols != vb.cols) throw TapeError("sub: shape mismatch");
    Node n;
    n.op = Op::Sub;
    n.a = a;
    n.b = b;
    n.val.rows = va.rows;
    n.val.cols = va.cols;
    n.val.v.resize(va.v.size());
    for (std::size_t i = 0; i < va.v.size(); ++i) n.val.v[i] = va.v[i] - vb.v[i];
    return push(std::move(n));
}

Tape::NodeId Tape::log_sigmoid(NodeId x) {
    const Value& vx = val(x);
    Node n;
    n.op = Op::LogSigmoid;
    n.a = x;
    n.val.rows = vx.rows;
    n.val.cols = vx.cols;
    n.val.v.resize(vx.v.size());
    for (std::size_t i = 0; i < vx.v.size(); ++i) {
        double u = vx.v[i];
        // -softplus(-x), branch form: never overflows for large |x|
        n.val.v[i] = u < 0.0 ? u - std::log1p(std::exp(u)) : -std::log1p(std::exp(-u));
    }
    return push(std::move(n));
}

double Tape::scalar(NodeId id) const {
    const Value& v = val(id);
    if (v.rows != 1 || v.cols != 1) throw TapeError("scalar: node is not scalar");
    return v.v[0];
}

GradientVector Tape::backward(NodeId root) {
    const Value& rv = val(root);
    if (rv.rows != 1 || rv.cols != 1) throw NonScalarRootError("backward: root must be a scalar");
    if (std::isnan(rv.v[0])) throw NanGradientError("backward: root value is NaN");

    std::vector<std::vector<double>> grads(nodes_.size());
    auto grad_of = [&](NodeId id) -> std::vector<double>& {
        auto& g = grads[static_cast<std::size_t>(id)];
        if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(id)].val.v.size(), 0.0);
        return g;
    };
    grad_of(root)[0] = 1.0;

    for (NodeId id = root; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        auto& g = grads[static_cast<std::size_t>(id)];
        if (g.empty()) continue;  // unreached
        switch (n.op) {
            case Op::Param:
            case Op::Constant:
                break;
            case Op::GatherRows: {
                auto& ga = grad_of(n.a);
                int cols = n.val.cols;
                for (std::size_t r = 0; r < n.index.size(); ++r) {
                    std::size_t dst = static_cast<std::size_t>(n.index[r]) * static_cast<std::size_t>(cols);
                    for (int c = 0; c < cols; ++c) ga[dst + static_cast<std::size_t>(c)] += g[r * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)];
                }
                break;
            }
            case Op::Add: {
                auto& ga = grad_of(n.a);
                auto& gb = grad_of(n.b);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i];
                    gb[i] += g[i];
                }
                break;
            }
            case Op::Sub: {
                auto& ga = grad_of(n.a);
                auto& gb = grad_of(n.b);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i];
                    gb[i] -= g[i];
                }
                break;
            }
            case Op::Mul: {
                const Value& va = val(n.a);
                const Value& vb = val(n.b);
                auto& ga = grad_of(n.a);
                auto& gb = grad_of(n.b);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i] * vb.v[i];
                    gb[i] += g[i] * va.v[i];
                }
                break;
            }
            case Op::MatMul: {
                const Value& va = val(n.a);
                const Value& vb = val(n.b);
                auto& ga = grad_of(n.a);
                auto& gb = grad_of(n.b);
                int nr = va.rows, nk = va.cols, nm = vb.cols;
                for (int i = 0; i < nr; ++i) {
                    const double* grow = g.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(nm);
                    double* garow = ga.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(nk);
                    const double* arow = va.v.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(nk);
                    for (int k = 0; k < nk; ++k) {
                        const double* brow = vb.v.data() + static_cast<std::size_t>(k) * static_cast<std::size_t>(nm);
                        double acc = 0.0;
                        for (int j = 0; j < nm; ++j) acc += grow[j] * brow[j];
                        garow[k] += acc;
                        const double aik = arow[k];
                        double* gbrow = gb.data() + static_cast<std::size_t>(k) * static_cast<std::size_t>(nm);
                        for (int j = 0; j < nm; ++j) gbrow[j] += aik * grow[j];
                    }
                }
                break;
            }
            case Op::LayerNorm: {
                const Value& vx = val(n.a);
                const Value& vg = val(n.b);
                auto& gx = grad_of(n.a);
                auto& gg = grad_of(n.b);
                auto& gb2 = grad_of(n.c);
                int d = vx.cols;
                for (int r = 0; r < vx.rows; ++r) {
                    double mean = n.saved[2 * static_cast<std::size_t>(r)];
                    double rstd = n.saved[2 * static_cast<std::size_t>(r) + 1];
                    const double* xrow = vx.v.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(d);
                    const double* grow = g.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(d);
                    double* gxrow = gx.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(d);
                    double m1 = 0.0, m2 = 0.0;  // mean(dy*gamma), mean(dy*gamma*xhat)
                    for (int i = 0; i < d; ++i) {
                        double xh = (xrow[i] - mean) * rstd;
                        double a = grow[i] * vg.v[static_cast<std::size_t>(i)];
                        m1 += a;
                        m2 += a * xh;
                        gg[static_cast<std::size_t>(i)] += grow[i] * xh;
                        gb2[static_cast<std::size_t>(i)] += grow[i];
                    }
                    m1 /= d;
                    m2 /= d;
                    for (int i = 0; i < d; ++i) {
                        double xh = (xrow[i] - mean) * rstd;
                        double a = grow[i] * vg.v[static_cast<std::size_t>(i)];
                        gxrow[i] += rstd * (a - m1 - xh * m2);
                    }
                }
                break;
            }
            case Op::Gelu: {
                const Value& vx = val(n.a);
                auto& gx = grad_of(n.a);
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * detail::gelu_derivative(vx.v[i]);
                break;
            }
            case Op::CausalAttention: {
                const Value& vq = val(n.a);
                const Value& vk = val(n.b);
                const Value& vv = val(n.c);
                auto& gq = grad_of(n.a);
                auto& gk = grad_of(n.b);
                auto& gv = grad_of(n.c);
                int d = vq.cols;
                int hd = d / n.heads;
                double scale = 1.0 / std::sqrt(static_cast<double>(hd));
                std::size_t off = 0;
                std::vector<double> dp(static_cast<std::size_t>(vq.rows));
                for (int i = 0; i < vq.rows; ++i) {
                    const double* grow = g.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(d);
                    for (int h = 0; h < n.heads; ++h) {
                        const int hoff = h * hd;
                        const double* probs = n.saved.data() + off + static_cast<std::size_t>(h) * static_cast<std::size_t>(i + 1);
                        double srow = 0.0;
                        for (int j = 0; j <= i; ++j) {
                            const double* vrow = vv.v.data() + static_cast<std::size_t>(j) * static_cast<std::size_t>(d);
                            double* gvrow = gv.data() + static_cast<std::size_t>(j) * static_cast<std::size_t>(d);
                            double dpj = 0.0;
                            for (int kk = 0; kk < hd; ++kk) {
                                dpj += grow[hoff + kk] * vrow[hoff + kk];
                                gvrow[hoff + kk] += probs[j] * grow[hoff + kk];
                            }
                            dp[static_cast<std::size_t>(j)] = dpj;
                            srow += probs[j] * dpj;
                        }
                        const double* qrow = vq.v.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(d);
                        double* gqrow = gq.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(d);
                        for (int j = 0; j <= i; ++j) {
                            double ds = probs[j] * (dp[static_cast<std::size_t>(j)] - srow) * scale;
                            const double* krow = vk.v.data() + static_cast<std::size_t>(j) * static_cast<std::size_t>(d);
                            double* gkrow = gk.data() + static_cast<std::size_t>(j) * static_cast<std::size_t>(d);
                            for (int kk = 0; kk < hd; ++kk) {
                                gqrow[hoff + kk] += ds * krow[hoff + kk];
                                gkrow[hoff + kk] += ds * qrow[hoff + kk];
                            }
                        }
                    }
                    off += static_cast<std::size_t>(n.heads) * static_cast<std::size_t>(i + 1);
                }
                break;
            }
            case Op::LogProbPick: {
                const Value& vl = val(n.a);
                auto& gl = grad_of(n.a);
                int cols = vl.cols;
                for (std::size_t r = 0; r < n.index.size(); ++r) {
                    double gr = g[r];
                    if (gr == 0.0) continue;
                    const double* prow = n.saved.data() + r * static_cast<std::size_t>(cols);
                    double* grow = gl.data() + static_cast<std::size_t>(n.index[r]) * static_cast<std::size_t>(cols);
                    for (int j = 0; j < cols; ++j) grow[j] -= gr * prow[j];
                    grow[n.targets[r]] += gr;
                }
                break;
            }
            case Op::Sum: {
                auto& gx = grad_of(n.a);
                for (double& u : gx) u += g[0];
                break;
            }
            case Op::Affine: {
                auto& gx = grad_of(n.a);
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += n.mul * g[i];
                break;
            }
            case Op::LogSigmoid: {
                const Value& vx = val(n.a);
                auto& gx = grad_of(n.a);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    double u = vx.v[i];
                    double s;  // sigma(-x), stable on both branches
                    if (u >= 0.0) {
                        double e = std::exp(-u);
                        s = e / (1.0 + e);
                    } else {
                        s = 1.0 / (1.0 + std::exp(u));
                    }
                    gx[i] += g[i] * s;
                }
                break;
            }
        }
    }

    GradientVector out = GradientVector::zeros_like(params_);
    for (NodeId id = 0; id <= root; ++id) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.op != Op::Param || grads[static_cast<std::size_t>(id)].empty()) continue;
        auto& dst = out.tensors[static_cast<std::size_t>(n.param_index)];
        const auto& src = grads[static_cast<std::size_t>(id)];
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
    }
    if (!out.all_finite()) throw NanGradientError("backward: non-finite parameter gradient");
    return out;
}

FdReport fd_check(const LossFn& loss_fn, const GradientVector& analytic, const model::Parameters& params,
                  double eps, const std::vector<FdCoord>& coords) {
    if (eps <= 0.0) throw std::invalid_argument("fd_check: eps must be positive");
    if (coords.empty()) throw std::invalid_argument("fd_check: coordinate sample must be non-empty");
    model::Parameters work = params;
    FdReport report;
    for (const FdCoord& c : coords) {
        float& slot = work.tensors[static_cast<std::size_t>(c.tensor)].values[c.offset];
        const float orig = slot;
        const float up = orig + static_cast<float>(eps);
        const float dn = orig - static_cast<float>(eps);
        slot = up;
        double f_up = loss_fn(work);
        slot = dn;
        double f_dn = loss_fn(work);
        slot = orig;
        if (!std::isfinite(f_up) || !std::isfinite(f_dn)) {
            throw NonFiniteLossError("fd_check: loss is non-finite at a perturbed point");
        }
        double h = static_cast<double>(up) - static_cast<double>(dn);
        double numeric = (f_up - f_dn) / h;
        double ana = analytic.at(c.tensor, c.offset);
        double denom = std::max({std::fabs(ana), std::fabs(numeric), 1e-8});
        double rel = std::fabs(numeric - ana) / denom;
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst = c;
            report.worst_analytic = ana;
            report.worst_numeric = numeric;
        }
    }
    return report;
}

std::vector<FdCoord> sample_coords(const model::Parameters& params, std::size_t count, RandomStream& rng) {
    std::size_t total = params.parameter_count();
    std::vector<FdCoord> coords;
    coords.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t flat = rng.next_below(total);
        for (std::size_t t = 0; t < params.tensors.size(); ++t) {
            if (flat < params.tensors[t].size()) {
                coords.push_back({static_cast<int>(t), flat});
                break;
            }
            flat -= params.tensors[t].size();
        }
    }
    return coords;
}

}  // namespace scdpo::diff
