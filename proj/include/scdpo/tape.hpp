#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "scdpo/model.hpp"
#include "scdpo/rng.hpp"

namespace scdpo::diff {

// Per-parameter gradients, congruent in shape with Parameters.
struct GradientVector {
    std::vector<std::vector<double>> tensors;

    static GradientVector zeros_like(const model::Parameters& params);
    void accumulate(const GradientVector& other, double scale);
    void scale(double s);
    bool all_finite() const;
    double at(int tensor, std::size_t offset) const { return tensors[static_cast<std::size_t>(tensor)][offset]; }
};

struct TapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NonScalarRootError : TapeError {
    using TapeError::TapeError;
};
struct NanGradientError : TapeError {
    using TapeError::TapeError;
};

// Record of a forward computation over a fixed primitive set. Nodes are
// appended in evaluation order; backward() replays them in reverse. Values are
// held in doubles; parameter leaves widen the stored float32 weights exactly,
// so the forward here reproduces the decoder's arithmetic bit for bit.
class Tape {
public:
    using NodeId = int;

    struct Value {
        int rows = 0;
        int cols = 0;
        std::vector<double> v;
        double at(int r, int c) const { return v[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)]; }
    };

    explicit Tape(const model::Parameters& params);

    // Leaves.
    NodeId param(const std::string& name);
    NodeId constant(int rows, int cols, std::vector<double> values);

    // Tensor primitives.
    NodeId gather_rows(NodeId table, std::vector<int> rows);
    NodeId add(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);  // elementwise
    NodeId matmul(NodeId a, NodeId b);
    NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta);
    NodeId gelu(NodeId x);
    NodeId causal_attention(NodeId q, NodeId k, NodeId v, int heads);
    // Per pick r: log softmax of logits row positions[r], entry targets[r].
    // Result is a column vector [picks, 1].
    NodeId logprob_pick(NodeId logits, std::vector<int> positions, std::vector<TokenId> targets);

    // Scalar / elementwise primitives.
    NodeId sum(NodeId x);
    NodeId affine(NodeId x, double mul, double shift);
    NodeId sub(NodeId a, NodeId b);
    NodeId log_sigmoid(NodeId x);

    const Value& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].val; }
    double scalar(NodeId id) const;
    std::size_t node_count() const { return nodes_.size(); }

    // Reverse sweep from a scalar root; parameters never touched by the graph
    // get zero gradients. Throws NonScalarRootError / NanGradientError.
    GradientVector backward(NodeId root);

private:
    enum class Op {
        Param,
        Constant,
        GatherRows,
        Add,
        Mul,
        MatMul,
        LayerNorm,
        Gelu,
        CausalAttention,
        LogProbPick,
        Sum,
        Affine,
        Sub,
        LogSigmoid,
    };

    struct Node {
        Op op;
        NodeId a = -1;
        NodeId b = -1;
        NodeId c = -1;
        Value val;
        std::vector<int> index;       // gather rows / pick positions
        std::vector<TokenId> targets;
        std::vector<double> saved;    // ln stats, attention probs, softmax rows
        int heads = 0;
        int param_index = -1;
        double mul = 0.0, shift = 0.0;
    };

    NodeId push(Node n);
    const Value& val(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].val; }

    const model::Parameters& params_;
    std::vector<Node> nodes_;
};

// --- finite-difference oracle ---------------------------------------------

struct FdCoord {
    int tensor = 0;
    std::size_t offset = 0;
};

struct FdReport {
    double max_rel_error = 0.0;
    FdCoord worst;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

struct NonFiniteLossError : TapeError {
    using TapeError::TapeError;
};

using LossFn = std::function<double(const model::Parameters&)>;

// Loss evaluation is double precision end to end, so rounding noise in the
// difference quotient sits near 1e-12; the step can therefore be small enough
// that O(eps^2) truncation stays below the 1e-4 verification bar even at
// near-zero-gradient coordinates.
inline constexpr double kDefaultFdEps = 1e-4;

// Central differences around the stored float32 weights; the divisor uses the
// actually-realized step so float rounding of p +/- eps cancels out. Relative
// error per coordinate is |num - ana| / max(|ana|, |num|, 1e-8).
FdReport fd_check(const LossFn& loss_fn, const GradientVector& analytic, const model::Parameters& params,
                  double eps, const std::vector<FdCoord>& coords);

std::vector<FdCoord> sample_coords(const model::Parameters& params, std::size_t count, RandomStream& rng);

}  // namespace scdpo::diff
