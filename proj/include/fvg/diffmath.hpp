#pragma once

// Minimal differentiable numeric core. Every forward op has a matching
// *_backward that returns the analytic vector-Jacobian product, so losses
// can be assembled by hand without a computation graph.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace fvg {

using Vec = std::vector<double>;
using ConstSpan = std::span<const double>;

inline constexpr double kEpsKl = 1e-7;
inline constexpr double kEpsBce = 1e-7;
inline constexpr double kEpsNorm = 1e-12;

// Row-major dense matrix.
class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols, double fill = 0.0);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    void fill(double v);
    bool operator==(const Mat&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// A trainable tensor plus its gradient accumulator (always the same shape).
struct Parameter {
    Parameter() = default;
    Parameter(std::string name, std::size_t rows, std::size_t cols);

    std::string name;
    Mat value;
    Mat grad;

    std::size_t size() const { return value.size(); }
};

// Non-owning registry of the parameters a training loop is allowed to touch.
// The modules that own the Parameters must outlive the set.
class ParamSet {
public:
    void add(Parameter& p);
    void add(const ParamSet& other);

    void zero_grad();
    std::size_t count() const { return params_.size(); }
    std::size_t scalar_count() const;

    Parameter* find(const std::string& name) const;
    std::vector<std::string> names() const;

    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::vector<Parameter*> params_;
};

// ---- vector helpers -------------------------------------------------------

double dot(ConstSpan a, ConstSpan b);
double norm(ConstSpan v);
Vec onehot(std::size_t n, std::size_t index);
std::size_t argmax(ConstSpan v);  // lowest index on ties
bool all_finite(ConstSpan v);

// y = W x
Vec matvec(const Mat& w, ConstSpan x);
// y = W^T x
Vec matvec_t(const Mat& w, ConstSpan x);
// W += a b^T
void add_outer(Mat& w, ConstSpan a, ConstSpan b);
void add_into(std::span<double> dst, ConstSpan src, double scale = 1.0);
// Gathers entries / rows by index.
Vec select(ConstSpan v, std::span<const std::size_t> index);
Mat select_rows(const Mat& m, std::span<const std::size_t> index);

// ---- forward ops and their analytic backward passes ----------------------

Vec softmax_temp(ConstSpan z, double tau_d);
// dL/dz given p = softmax_temp(z, tau) and dL/dp.
Vec softmax_temp_backward(ConstSpan p, ConstSpan dp, double tau_d);

double entropy(ConstSpan p);
Vec entropy_backward(ConstSpan p);

// KL(p || q) with q clamped to >= kEpsKl inside the log.
double kl_div(ConstSpan p, ConstSpan q);
// dKL/dq (zero where the clamp is active).
Vec kl_div_backward_q(ConstSpan p, ConstSpan q);

double cross_entropy(ConstSpan z, std::size_t label, double tau_d);
Vec cross_entropy_backward(ConstSpan z, std::size_t label, double tau_d);

double bce(double r, int r_star);
// dBCE/dr (zero where the clamp is active).
double bce_backward(double r, int r_star);

double sigmoid(double q);

Vec l2_normalize(ConstSpan v);
// dL/dv given y = l2_normalize(v) and dL/dy.
Vec l2_normalize_backward(ConstSpan v, ConstSpan dy);

double cosine(ConstSpan p, ConstSpan q);
// (dcos/dp, dcos/dq)
std::pair<Vec, Vec> cosine_backward(ConstSpan p, ConstSpan q);

// Rounds every entry to the nearest float32. Parameters are kept on the float32
// grid between steps so checkpoints (stored as float32) reload bit-exactly.
void round_to_float(std::span<double> values);
void round_to_float(ParamSet& params);

// ---- optimisation ----------------------------------------------------------

// p <- p - lr * grad for every registered parameter, then zero the grads.
// Throws DivergedError (and leaves parameters untouched) on a non-finite gradient.
void sgd_step(ParamSet& params, double lr);

// An objective evaluates the scalar loss at the current parameter values.
// When `accumulate` is true it must also add dLoss/dparam into each grad.
using Objective = std::function<double(bool accumulate)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
};

// Compares the objective's analytic gradient against central differences,
// |analytic - numeric| / max(1, |numeric|), maximised over every scalar.
GradCheckResult grad_check(const Objective& objective, ParamSet& params, double h = 1e-4);

}  // namespace fvg
