#include "caliber/tape.hpp"

#include <cmath>

#include "caliber/errors.hpp"
#include "caliber/ops.hpp"

namespace caliber {

ParamId ParamStore::add(const std::string& name, Matrix init) {
    if (find(name) >= 0) throw ConfigError("duplicate parameter name: " + name);
    if (!init.all_finite()) throw NumericError("non-finite initializer for " + name);
    entries.push_back({name, std::move(init)});
    return static_cast<ParamId>(entries.size()) - 1;
}

ParamId ParamStore::find(const std::string& name) const {
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (entries[i].name == name) return static_cast<ParamId>(i);
    return -1;
}

long long ParamStore::scalar_count() const {
    long long n = 0;
    for (const auto& e : entries) n += e.value.size();
    return n;
}

Tape::Tape(const ParamStore& params)
    : params_(&params), param_node_(params.count(), -1) {
    nodes_.reserve(1024);
}

Tape::Id Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size()) - 1;
}

Matrix& Tape::adj(Id n) {
    Matrix& a = nodes_[n].adjoint;
    if (a.rows == 0) a = Matrix::zeros(nodes_[n].value.rows, nodes_[n].value.cols);
    return a;
}

void Tape::check_vector(Id a, const char* who) const {
    const Matrix& v = nodes_[a].value;
    if (v.rows != 1 && v.cols != 1)
        throw DimensionError(std::string(who) + ": expects a vector-shaped node");
    if (v.size() == 0) throw DomainError(std::string(who) + ": empty vector");
}

Tape::Id Tape::constant(Matrix v) {
    Node n;
    n.op = Op::kConst;
    n.value = std::move(v);
    return push(std::move(n));
}

Tape::Id Tape::param(ParamId p) {
    if (p < 0 || p >= static_cast<ParamId>(param_node_.size()))
        throw ConfigError("param id out of range");
    if (param_node_[p] >= 0) return param_node_[p];
    Node n;
    n.op = Op::kParam;
    n.pid = p;
    n.value = params_->value(p);
    Id id = push(std::move(n));
    param_node_[p] = id;
    return id;
}

Tape::Id Tape::matmul(Id a, Id b) {
    Node n;
    n.op = Op::kMatmul;
    n.a = a;
    n.b = b;
    n.value = caliber::matmul(nodes_[a].value, nodes_[b].value);
    return push(std::move(n));
}

Tape::Id Tape::transpose(Id a) {
    Node n;
    n.op = Op::kTranspose;
    n.a = a;
    n.value = caliber::transpose(nodes_[a].value);
    return push(std::move(n));
}

Tape::Id Tape::add(Id a, Id b) {
    Node n;
    n.op = Op::kAdd;
    n.a = a;
    n.b = b;
    n.value = caliber::add(nodes_[a].value, nodes_[b].value);
    return push(std::move(n));
}

Tape::Id Tape::sub(Id a, Id b) {
    if (!nodes_[a].value.same_shape(nodes_[b].value))
        throw DimensionError("sub: shape mismatch");
    Node n;
    n.op = Op::kSub;
    n.a = a;
    n.b = b;
    n.value = nodes_[a].value;
    for (int i = 0; i < n.value.size(); ++i) n.value.data[i] -= nodes_[b].value.data[i];
    return push(std::move(n));
}

Tape::Id Tape::add_rowvec(Id a, Id b) {
    const Matrix& av = nodes_[a].value;
    const Matrix& bv = nodes_[b].value;
    if (bv.rows != 1 || bv.cols != av.cols)
        throw DimensionError("add_rowvec: b must be 1 x cols(a)");
    Node n;
    n.op = Op::kAddRowvec;
    n.a = a;
    n.b = b;
    n.value = av;
    for (int i = 0; i < av.rows; ++i)
        for (int j = 0; j < av.cols; ++j) n.value.at(i, j) += bv.at(0, j);
    return push(std::move(n));
}

Tape::Id Tape::hadamard(Id a, Id b) {
    if (!nodes_[a].value.same_shape(nodes_[b].value))
        throw DimensionError("hadamard: shape mismatch");
    Node n;
    n.op = Op::kHadamard;
    n.a = a;
    n.b = b;
    n.value = nodes_[a].value;
    for (int i = 0; i < n.value.size(); ++i) n.value.data[i] *= nodes_[b].value.data[i];
    return push(std::move(n));
}

Tape::Id Tape::scale(Id a, double c) {
    Node n;
    n.op = Op::kScale;
    n.a = a;
    n.scalar = c;
    n.value = caliber::scale(nodes_[a].value, c);
    return push(std::move(n));
}

Tape::Id Tape::add_scalar(Id a, double c) {
    Node n;
    n.op = Op::kAddScalar;
    n.a = a;
    n.scalar = c;
    n.value = nodes_[a].value;
    for (double& v : n.value.data) v += c;
    return push(std::move(n));
}

Tape::Id Tape::tanh_of(Id a) {
    Node n;
    n.op = Op::kTanh;
    n.a = a;
    n.value = nodes_[a].value;
    for (double& v : n.value.data) v = std::tanh(v);
    return push(std::move(n));
}

Tape::Id Tape::softplus_of(Id a) {
    Node n;
    n.op = Op::kSoftplus;
    n.a = a;
    n.value = nodes_[a].value;
    for (double& v : n.value.data) v = caliber::softplus(v);
    return push(std::move(n));
}

Tape::Id Tape::log_of(Id a) {
    Node n;
    n.op = Op::kLog;
    n.a = a;
    n.value = nodes_[a].value;
    for (double& v : n.value.data) {
        if (v <= 0.0) throw DomainError("log_of: nonpositive input");
        v = std::log(v);
    }
    return push(std::move(n));
}

Tape::Id Tape::softmax_rows(Id a) {
    Node n;
    n.op = Op::kSoftmaxRows;
    n.a = a;
    const Matrix& av = nodes_[a].value;
    n.value = Matrix(av.rows, av.cols);
    for (int i = 0; i < av.rows; ++i) {
        std::vector<double> row(av.cols);
        for (int j = 0; j < av.cols; ++j) row[j] = av.at(i, j);
        std::vector<double> sm = caliber::softmax_row(row);
        for (int j = 0; j < av.cols; ++j) n.value.at(i, j) = sm[j];
    }
    return push(std::move(n));
}

Tape::Id Tape::masked_softmax_vec(Id a, std::vector<std::uint8_t> keep) {
    check_vector(a, "masked_softmax_vec");
    const Matrix& av = nodes_[a].value;
    if (static_cast<int>(keep.size()) != av.size())
        throw DimensionError("masked_softmax_vec: mask length mismatch");
    int kept = 0;
    for (auto k : keep) kept += (k != 0);
    if (kept == 0) throw ContextError("masked_softmax_vec: all entries masked");

    Node n;
    n.op = Op::kMaskedSoftmaxVec;
    n.a = a;
    n.mask = std::move(keep);
    n.value = Matrix(av.rows, av.cols);
    double mx = -1e308;
    for (int i = 0; i < av.size(); ++i)
        if (n.mask[i]) mx = std::max(mx, av.data[i]);
    double sum = 0.0;
    for (int i = 0; i < av.size(); ++i) {
        if (!n.mask[i]) continue;
        n.value.data[i] = std::exp(av.data[i] - mx);
        sum += n.value.data[i];
    }
    for (int i = 0; i < av.size(); ++i)
        if (n.mask[i]) n.value.data[i] /= sum;
    return push(std::move(n));
}

Tape::Id Tape::log_softmax_vec(Id a) {
    check_vector(a, "log_softmax_vec");
    const Matrix& av = nodes_[a].value;
    Node n;
    n.op = Op::kLogSoftmaxVec;
    n.a = a;
    n.value = av;
    const double lse = caliber::log_sum_exp(av.data);
    for (double& v : n.value.data) v -= lse;
    return push(std::move(n));
}

Tape::Id Tape::concat_rows(Id a, Id b) {
    const Matrix& av = nodes_[a].value;
    const Matrix& bv = nodes_[b].value;
    if (av.cols != bv.cols) throw DimensionError("concat_rows: column mismatch");
    Node n;
    n.op = Op::kConcatRows;
    n.a = a;
    n.b = b;
    n.value = Matrix(av.rows + bv.rows, av.cols);
    std::copy(av.data.begin(), av.data.end(), n.value.data.begin());
    std::copy(bv.data.begin(), bv.data.end(), n.value.data.begin() + av.data.size());
    return push(std::move(n));
}

Tape::Id Tape::concat_cols(Id a, Id b) {
    const Matrix& av = nodes_[a].value;
    const Matrix& bv = nodes_[b].value;
    if (av.rows != bv.rows) throw DimensionError("concat_cols: row mismatch");
    Node n;
    n.op = Op::kConcatCols;
    n.a = a;
    n.b = b;
    n.value = Matrix(av.rows, av.cols + bv.cols);
    for (int i = 0; i < av.rows; ++i) {
        for (int j = 0; j < av.cols; ++j) n.value.at(i, j) = av.at(i, j);
        for (int j = 0; j < bv.cols; ++j) n.value.at(i, av.cols + j) = bv.at(i, j);
    }
    return push(std::move(n));
}

Tape::Id Tape::slice_rows(Id a, int start, int len) {
    const Matrix& av = nodes_[a].value;
    if (start < 0 || len < 1 || start + len > av.rows)
        throw DimensionError("slice_rows: range out of bounds");
    Node n;
    n.op = Op::kSliceRows;
    n.a = a;
    n.i0 = start;
    n.i1 = len;
    n.value = Matrix(len, av.cols);
    std::copy(av.data.begin() + static_cast<std::size_t>(start) * av.cols,
              av.data.begin() + static_cast<std::size_t>(start + len) * av.cols,
              n.value.data.begin());
    return push(std::move(n));
}

Tape::Id Tape::slice_cols(Id a, int start, int len) {
    const Matrix& av = nodes_[a].value;
    if (start < 0 || len < 1 || start + len > av.cols)
        throw DimensionError("slice_cols: range out of bounds");
    Node n;
    n.op = Op::kSliceCols;
    n.a = a;
    n.i0 = start;
    n.i1 = len;
    n.value = Matrix(av.rows, len);
    for (int i = 0; i < av.rows; ++i)
        for (int j = 0; j < len; ++j) n.value.at(i, j) = av.at(i, start + j);
    return push(std::move(n));
}

Tape::Id Tape::reshape(Id a, int rows, int cols) {
    const Matrix& av = nodes_[a].value;
    if (rows * cols != av.size()) throw DimensionError("reshape: element count mismatch");
    Node n;
    n.op = Op::kReshape;
    n.a = a;
    n.i0 = rows;
    n.i1 = cols;
    n.value = Matrix(rows, cols, av.data);
    return push(std::move(n));
}

Tape::Id Tape::reduce_sum(Id a) {
    Node n;
    n.op = Op::kReduceSum;
    n.a = a;
    double s = 0.0;
    for (double v : nodes_[a].value.data) s += v;
    n.value = Matrix(1, 1, {s});
    return push(std::move(n));
}

Tape::Id Tape::mean_rows(Id a) {
    const Matrix& av = nodes_[a].value;
    if (av.rows < 1) throw DimensionError("mean_rows: empty matrix");
    Node n;
    n.op = Op::kMeanRows;
    n.a = a;
    n.value = Matrix(1, av.cols);
    for (int i = 0; i < av.rows; ++i)
        for (int j = 0; j < av.cols; ++j) n.value.at(0, j) += av.at(i, j);
    for (double& v : n.value.data) v /= av.rows;
    return push(std::move(n));
}

Tape::Id Tape::layernorm_rows(Id a, double eps) {
    const Matrix& av = nodes_[a].value;
    Node n;
    n.op = Op::kLayerNorm;
    n.a = a;
    n.scalar = eps;
    n.value = Matrix(av.rows, av.cols);
    for (int i = 0; i < av.rows; ++i) {
        double mean = 0.0;
        for (int j = 0; j < av.cols; ++j) mean += av.at(i, j);
        mean /= av.cols;
        double var = 0.0;
        for (int j = 0; j < av.cols; ++j) {
            const double d = av.at(i, j) - mean;
            var += d * d;
        }
        var /= av.cols;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < av.cols; ++j) n.value.at(i, j) = (av.at(i, j) - mean) * inv;
    }
    return push(std::move(n));
}

void Tape::backward(Id loss) {
    if (ran_backward_) throw NumericError("backward() called twice on one tape");
    ran_backward_ = true;
    if (nodes_[loss].value.size() != 1)
        throw DimensionError("backward: loss must be 1x1");
    adj(loss).data[0] = 1.0;

    for (Id i = static_cast<Id>(nodes_.size()) - 1; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.adjoint.rows == 0) continue;  // node never touched the loss
        const Matrix& g = n.adjoint;
        switch (n.op) {
            case Op::kConst:
            case Op::kParam:
                break;
            case Op::kMatmul: {
                // dA = g * B^T ; dB = A^T * g
                const Matrix& A = nodes_[n.a].value;
                const Matrix& B = nodes_[n.b].value;
                Matrix& da = adj(n.a);
                for (int r = 0; r < A.rows; ++r)
                    for (int c = 0; c < A.cols; ++c) {
                        double s = 0.0;
                        for (int j = 0; j < B.cols; ++j) s += g.at(r, j) * B.at(c, j);
                        da.at(r, c) += s;
                    }
                Matrix& db = adj(n.b);
                for (int r = 0; r < B.rows; ++r)
                    for (int c = 0; c < B.cols; ++c) {
                        double s = 0.0;
                        for (int j = 0; j < A.rows; ++j) s += A.at(j, r) * g.at(j, c);
                        db.at(r, c) += s;
                    }
                break;
            }
            case Op::kTranspose: {
                Matrix& da = adj(n.a);
                for (int r = 0; r < g.rows; ++r)
                    for (int c = 0; c < g.cols; ++c) da.at(c, r) += g.at(r, c);
                break;
            }
            case Op::kAdd: {
                Matrix& da = adj(n.a);
                for (int k = 0; k < g.size(); ++k) da.data[k] += g.data[k];
                Matrix& db = adj(n.b);
                for (int k = 0; k < g.size(); ++k) db.data[k] += g.data[k];
                break;
            }
            case Op::kSub: {
                Matrix& da = adj(n.a);
                for (int k = 0; k < g.size(); ++k) da.data[k] += g.data[k];
                Matrix& db = adj(n.b);
                for (int k = 0; k < g.size(); ++k) db.data[k] -= g.data[k];
                break;
            }
            case Op::kAddRowvec: {
                Matrix& da = adj(n.a);
                for (int k = 0; k < g.size(); ++k) da.data[k] += g.data[k];
                Matrix& db = adj(n.b);
                for (int r = 0; r < g.rows; ++r)
                    for (int c = 0; c < g.cols; ++c) db.at(0, c) += g.at(r, c);
                break;
            }
            case Op::kHadamard: {
                const Matrix& A = nodes_[n.a].value;
                const Matrix& B = nodes_[n.b].value;
                Matrix& da = adj(n.a);
                for (int k = 0; k < g.size(); ++k) da.data[k] += g.data[k] * B.data[k];
                Matrix& db = adj(n.b);
                for (int k = 0; k < g.size(); ++k) db.data[k] += g.data[k] * A.data[k];
                break;
            }
            case Op::kScale: {
                Matrix& da = adj(n.a);
                for (int k = 0; k < g.size(); ++k) da.data[k] += g.data[k] * n.scalar;
                break;
            }
            case Op::kAddScalar: {
                Matrix& da = adj(n.a);
                for (int k = 0; k < g.size(); ++k) da.data[k] += g.data[k];
                break;
            }
            case Op::kTanh: {
                Matrix& da = adj(n.a);
                for (int k = 0; k < g.size(); ++k) {
                    const double t = n.value.data[k];
                    da.data[k] += g.data[k] * (1.0 - t * t);
                }
                break;
            }
            case Op::kSoftplus: {
                const Matrix& A = nodes_[n.a].value;
                Matrix& da = adj(n.a);
                for (int k = 0; k < g.size(); ++k)
                    da.data[k] += g.data[k] * sigmoid(A.data[k]);
                break;
            }
            case Op::kLog: {
                const Matrix& A = nodes_[n.a].value;
                Matrix& da = adj(n.a);
                for (int k = 0; k < g.size(); ++k) da.data[k] += g.data[k] / A.data[k];
                break;
            }
            case Op::kSoftmaxRows: {
                // dx_j = y_j * (g_j - sum_k g_k y_k), per row
                Matrix& da = adj(n.a);
                for (int r = 0; r < g.rows; ++r) {
                    double dot = 0.0;
                    for (int c = 0; c < g.cols; ++c) dot += g.at(r, c) * n.value.at(r, c);
                    for (int c = 0; c < g.cols; ++c)
                        da.at(r, c) += n.value.at(r, c) * (g.at(r, c) - dot);
                }
                break;
            }
            case Op::kMaskedSoftmaxVec: {
                Matrix& da = adj(n.a);
                double dot = 0.0;
                for (int k = 0; k < g.size(); ++k)
                    if (n.mask[k]) dot += g.data[k] * n.value.data[k];
                for (int k = 0; k < g.size(); ++k)
                    if (n.mask[k]) da.data[k] += n.value.data[k] * (g.data[k] - dot);
                break;
            }
            case Op::kLogSoftmaxVec: {
                // dx_j = g_j - softmax(x)_j * sum_k g_k
                Matrix& da = adj(n.a);
                double gsum = 0.0;
                for (int k = 0; k < g.size(); ++k) gsum += g.data[k];
                for (int k = 0; k < g.size(); ++k)
                    da.data[k] += g.data[k] - std::exp(n.value.data[k]) * gsum;
                break;
            }
            case Op::kConcatRows: {
                const Matrix& A = nodes_[n.a].value;
                Matrix& da = adj(n.a);
                for (int k = 0; k < A.size(); ++k) da.data[k] += g.data[k];
                Matrix& db = adj(n.b);
                for (int k = 0; k < db.size(); ++k) db.data[k] += g.data[A.size() + k];
                break;
            }
            case Op::kConcatCols: {
                const Matrix& A = nodes_[n.a].value;
                Matrix& da = adj(n.a);
                Matrix& db = adj(n.b);
                for (int r = 0; r < g.rows; ++r) {
                    for (int c = 0; c < A.cols; ++c) da.at(r, c) += g.at(r, c);
                    for (int c = 0; c < db.cols; ++c) db.at(r, c) += g.at(r, A.cols + c);
                }
                break;
            }
            case Op::kSliceRows: {
                Matrix& da = adj(n.a);
                for (int r = 0; r < g.rows; ++r)
                    for (int c = 0; c < g.cols; ++c) da.at(n.i0 + r, c) += g.at(r, c);
                break;
            }
            case Op::kSliceCols: {
                Matrix& da = adj(n.a);
                for (int r = 0; r < g.rows; ++r)
                    for (int c = 0; c < g.cols; ++c) da.at(r, n.i0 + c) += g.at(r, c);
                break;
            }
            case Op::kReshape: {
                Matrix& da = adj(n.a);
                for (int k = 0; k < g.size(); ++k) da.data[k] += g.data[k];
                break;
            }
            case Op::kReduceSum: {
                Matrix& da = adj(n.a);
                const double s = g.data[0];
                for (int k = 0; k < da.size(); ++k) da.data[k] += s;
                break;
            }
            case Op::kMeanRows: {
                Matrix& da = adj(n.a);
                const double inv = 1.0 / da.rows;
                for (int r = 0; r < da.rows; ++r)
                    for (int c = 0; c < da.cols; ++c) da.at(r, c) += g.at(0, c) * inv;
                break;
            }
            case Op::kLayerNorm: {
                // With y = (x - m) / s, s = sqrt(var + eps):
                // dx = (g - mean(g) - y * mean(g .* y)) / s, per row
                const Matrix& A = nodes_[n.a].value;
                Matrix& da = adj(n.a);
                for (int r = 0; r < g.rows; ++r) {
                    double mean = 0.0;
                    for (int c = 0; c < A.cols; ++c) mean += A.at(r, c);
                    mean /= A.cols;
                    double var = 0.0;
                    for (int c = 0; c < A.cols; ++c) {
                        const double d = A.at(r, c) - mean;
                        var += d * d;
                    }
                    var /= A.cols;
                    const double inv = 1.0 / std::sqrt(var + n.scalar);
                    double gmean = 0.0, gymean = 0.0;
                    for (int c = 0; c < A.cols; ++c) {
                        gmean += g.at(r, c);
                        gymean += g.at(r, c) * n.value.at(r, c);
                    }
                    gmean /= A.cols;
                    gymean /= A.cols;
                    for (int c = 0; c < A.cols; ++c)
                        da.at(r, c) +=
                            inv * (g.at(r, c) - gmean - n.value.at(r, c) * gymean);
                }
                break;
            }
        }
    }
}

Matrix Tape::grad(ParamId p) const {
    if (p < 0 || p >= static_cast<ParamId>(param_node_.size()))
        throw ConfigError("grad: param id out of range");
    const Id node = param_node_[p];
    const Matrix& v = params_->value(p);
    if (node < 0 || nodes_[node].adjoint.rows == 0)
        return Matrix::zeros(v.rows, v.cols);
    return nodes_[node].adjoint;
}

bool Tape::used(ParamId p) const {
    return p >= 0 && p < static_cast<ParamId>(param_node_.size()) && param_node_[p] >= 0;
}

}  // namespace caliber
