#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "caliber/matrix.hpp"

namespace caliber {

using ParamId = int;

// Registry of trainable parameters. Frozen weights never enter the store, so
// they can never receive adjoints.
struct ParamStore {
    struct Entry {
        std::string name;
        Matrix value;
    };
    std::vector<Entry> entries;

    ParamId add(const std::string& name, Matrix init);
    ParamId find(const std::string& name) const;  // -1 when absent
    Matrix& value(ParamId p) { return entries[p].value; }
    const Matrix& value(ParamId p) const { return entries[p].value; }
    const std::string& name(ParamId p) const { return entries[p].name; }
    int count() const { return static_cast<int>(entries.size()); }
    long long scalar_count() const;
};

// Reverse-mode autodiff tape over matrix-level primitives. Values are
// computed eagerly at node creation; backward() runs one reverse sweep and
// accumulates adjoints. Each registered parameter appears as at most one
// leaf node per tape (param() memoizes), so shared parameters accumulate
// adjoints from every use site.
class Tape {
  public:
    using Id = int;

    explicit Tape(const ParamStore& params);

    Id constant(Matrix v);
    Id param(ParamId p);

    Id matmul(Id a, Id b);
    Id transpose(Id a);
    Id add(Id a, Id b);
    Id sub(Id a, Id b);
    Id add_rowvec(Id a, Id b);  // b is 1 x cols(a), broadcast over rows
    Id hadamard(Id a, Id b);
    Id scale(Id a, double c);
    Id add_scalar(Id a, double c);
    Id tanh_of(Id a);
    Id softplus_of(Id a);
    Id log_of(Id a);
    Id softmax_rows(Id a);
    // Softmax over all entries of a vector-shaped node; entries with
    // keep[i] == 0 get exactly zero weight and zero gradient.
    Id masked_softmax_vec(Id a, std::vector<std::uint8_t> keep);
    Id log_softmax_vec(Id a);
    Id concat_rows(Id a, Id b);
    Id concat_cols(Id a, Id b);
    Id slice_rows(Id a, int start, int len);
    Id slice_cols(Id a, int start, int len);
    Id reshape(Id a, int rows, int cols);
    Id reduce_sum(Id a);  // 1x1
    Id mean_rows(Id a);   // T x n -> 1 x n
    Id layernorm_rows(Id a, double eps = 1e-5);  // per-row (x - mean) / sqrt(var + eps)

    const Matrix& value(Id n) const { return nodes_[n].value; }
    int node_count() const { return static_cast<int>(nodes_.size()); }

    // Reverse sweep from a 1x1 loss node. May be called once per tape.
    void backward(Id loss);

    // Adjoint of a registered parameter after backward(); exact zeros of the
    // parameter's shape when the parameter was never used on this tape.
    Matrix grad(ParamId p) const;
    bool used(ParamId p) const;

  private:
    enum class Op : std::uint8_t {
        kConst, kParam, kMatmul, kTranspose, kAdd, kSub, kAddRowvec, kHadamard,
        kScale, kAddScalar, kTanh, kSoftplus, kLog, kSoftmaxRows,
        kMaskedSoftmaxVec, kLogSoftmaxVec, kConcatRows, kConcatCols,
        kSliceRows, kSliceCols, kReshape, kReduceSum, kMeanRows, kLayerNorm
    };

    struct Node {
        Op op;
        Id a = -1;
        Id b = -1;
        double scalar = 0.0;
        int i0 = 0;  // slice start / reshape rows
        int i1 = 0;  // slice length / reshape cols
        ParamId pid = -1;
        Matrix value;
        Matrix adjoint;  // allocated lazily during backward
        std::vector<std::uint8_t> mask;
    };

    Id push(Node n);
    Matrix& adj(Id n);
    void check_vector(Id a, const char* who) const;

    const ParamStore* params_;
    std::vector<Node> nodes_;
    std::vector<Id> param_node_;  // ParamId -> node id, -1 if unused
    bool ran_backward_ = false;
};

}  // namespace caliber
