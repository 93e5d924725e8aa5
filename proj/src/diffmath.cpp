#include "fvg/diffmath.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "fvg/errors.hpp"

namespace fvg {

namespace {

void require_same_length(ConstSpan a, ConstSpan b, const char* op) {
    if (a.size() != b.size()) {
        std::ostringstream msg;
        msg << op << ": length mismatch (" << a.size() << " vs " << b.size() << ")";
        throw ShapeError(msg.str());
    }
}

void require_tau(double tau_d, const char* op) {
    if (!(tau_d > 0.0) || !std::isfinite(tau_d)) {
        throw ConfigError(std::string(op) + ": temperature must be positive and finite");
    }
}

void require_label(std::size_t label, std::size_t n, const char* op) {
    if (label >= n) {
        std::ostringstream msg;
        msg << op << ": label " << label << " out of range for " << n << " classes";
        throw DomainError(msg.str());
    }
}

double log_sum_exp_scaled(ConstSpan z, double inv_tau) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : z) m = std::max(m, v * inv_tau);
    double s = 0.0;
    for (double v : z) s += std::exp(v * inv_tau - m);
    return m + std::log(s);
}

}  // namespace

Mat::Mat(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

void Mat::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Parameter::Parameter(std::string name_, std::size_t rows, std::size_t cols)
    : name(std::move(name_)), value(rows, cols), grad(rows, cols) {}

void ParamSet::add(Parameter& p) {
    if (find(p.name) != nullptr) {
        throw ConfigError("duplicate parameter name: " + p.name);
    }
    params_.push_back(&p);
}

void ParamSet::add(const ParamSet& other) {
    for (Parameter* p : other) add(*p);
}

void ParamSet::zero_grad() {
    for (Parameter* p : params_) p->grad.fill(0.0);
}

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const Parameter* p : params_) n += p->size();
    return n;
}

Parameter* ParamSet::find(const std::string& name) const {
    for (Parameter* p : params_) {
        if (p->name == name) return p;
    }
    return nullptr;
}

std::vector<std::string> ParamSet::names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const Parameter* p : params_) out.push_back(p->name);
    return out;
}

double dot(ConstSpan a, ConstSpan b) {
    require_same_length(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(ConstSpan v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

Vec onehot(std::size_t n, std::size_t index) {
    require_label(index, n, "onehot");
    Vec v(n, 0.0);
    v[index] = 1.0;
    return v;
}

std::size_t argmax(ConstSpan v) {
    if (v.empty()) throw ShapeError("argmax: empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

bool all_finite(ConstSpan v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

Vec matvec(const Mat& w, ConstSpan x) {
    if (w.cols() != x.size()) throw ShapeError("matvec: matrix cols != vector length");
    Vec y(w.rows(), 0.0);
    for (std::size_t r = 0; r < w.rows(); ++r) {
        auto row = w.row(r);
        double s = 0.0;
        for (std::size_t c = 0; c < x.size(); ++c) s += row[c] * x[c];
        y[r] = s;
    }
    return y;
}

Vec matvec_t(const Mat& w, ConstSpan x) {
    if (w.rows() != x.size()) throw ShapeError("matvec_t: matrix rows != vector length");
    Vec y(w.cols(), 0.0);
    for (std::size_t r = 0; r < w.rows(); ++r) {
        auto row = w.row(r);
        const double xr = x[r];
        if (xr == 0.0) continue;
        for (std::size_t c = 0; c < y.size(); ++c) y[c] += row[c] * xr;
    }
    return y;
}

void add_outer(Mat& w, ConstSpan a, ConstSpan b) {
    if (w.rows() != a.size() || w.cols() != b.size()) {
        throw ShapeError("add_outer: shape mismatch");
    }
    for (std::size_t r = 0; r < a.size(); ++r) {
        if (a[r] == 0.0) continue;
        auto row = w.row(r);
        for (std::size_t c = 0; c < b.size(); ++c) row[c] += a[r] * b[c];
    }
}

void add_into(std::span<double> dst, ConstSpan src, double scale) {
    if (dst.size() != src.size()) throw ShapeError("add_into: length mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

Vec select(ConstSpan v, std::span<const std::size_t> index) {
    Vec out;
    out.reserve(index.size());
    for (std::size_t i : index) {
        if (i >= v.size()) throw ShapeError("select: index out of range");
        out.push_back(v[i]);
    }
    return out;
}

Mat select_rows(const Mat& m, std::span<const std::size_t> index) {
    Mat out(index.size(), m.cols());
    for (std::size_t k = 0; k < index.size(); ++k) {
        if (index[k] >= m.rows()) throw ShapeError("select_rows: index out of range");
        std::copy(m.row(index[k]).begin(), m.row(index[k]).end(), out.row(k).begin());
    }
    return out;
}

Vec softmax_temp(ConstSpan z, double tau_d) {
    require_tau(tau_d, "softmax_temp");
    if (z.empty()) throw ShapeError("softmax_temp: empty logits");
    if (!all_finite(z)) throw DomainError("softmax_temp: non-finite logits");
    const double inv_tau = 1.0 / tau_d;
    double m = -std::numeric_limits<double>::infinity();
    for (double v : z) m = std::max(m, v * inv_tau);
    Vec p(z.size());
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] * inv_tau - m);
        s += p[i];
    }
    for (double& v : p) v /= s;
    return p;
}

Vec softmax_temp_backward(ConstSpan p, ConstSpan dp, double tau_d) {
    require_same_length(p, dp, "softmax_temp_backward");
    require_tau(tau_d, "softmax_temp_backward");
    const double inner = dot(p, dp);
    Vec dz(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) dz[i] = p[i] * (dp[i] - inner) / tau_d;
    return dz;
}

double entropy(ConstSpan p) {
    if (p.empty()) throw ShapeError("entropy: empty distribution");
    double sum = 0.0;
    double h = 0.0;
    for (double v : p) {
        if (v < 0.0 || !std::isfinite(v)) throw DomainError("entropy: negative or non-finite probability");
        sum += v;
        if (v > 0.0) h -= v * std::log(v);
    }
    if (std::abs(sum - 1.0) > 1e-6) throw DomainError("entropy: probabilities do not sum to 1");
    return std::max(h, 0.0);
}

Vec entropy_backward(ConstSpan p) {
    Vec g(p.size(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) g[i] = -(std::log(p[i]) + 1.0);
    }
    return g;
}

double kl_div(ConstSpan p, ConstSpan q) {
    require_same_length(p, q, "kl_div");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) s += p[i] * (std::log(p[i]) - std::log(std::max(q[i], kEpsKl)));
    }
    return std::max(s, 0.0);
}

Vec kl_div_backward_q(ConstSpan p, ConstSpan q) {
    require_same_length(p, q, "kl_div_backward_q");
    Vec g(q.size(), 0.0);
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (p[i] > 0.0 && q[i] > kEpsKl) g[i] = -p[i] / q[i];
    }
    return g;
}

double cross_entropy(ConstSpan z, std::size_t label, double tau_d) {
    require_tau(tau_d, "cross_entropy");
    if (z.empty()) throw ShapeError("cross_entropy: empty logits");
    require_label(label, z.size(), "cross_entropy");
    const double inv_tau = 1.0 / tau_d;
    return std::max(log_sum_exp_scaled(z, inv_tau) - z[label] * inv_tau, 0.0);
}

Vec cross_entropy_backward(ConstSpan z, std::size_t label, double tau_d) {
    require_label(label, z.size(), "cross_entropy_backward");
    Vec g = softmax_temp(z, tau_d);
    g[label] -= 1.0;
    for (double& v : g) v /= tau_d;
    return g;
}

namespace {
void require_binary(int r_star) {
    if (r_star != 0 && r_star != 1) throw DomainError("bce: target must be 0 or 1");
}
}  // namespace

double bce(double r, int r_star) {
    require_binary(r_star);
    const double rc = std::clamp(r, kEpsBce, 1.0 - kEpsBce);
    return r_star == 1 ? -std::log(rc) : -std::log(1.0 - rc);
}

double bce_backward(double r, int r_star) {
    require_binary(r_star);
    if (r <= kEpsBce || r >= 1.0 - kEpsBce) return 0.0;
    return r_star == 1 ? -1.0 / r : 1.0 / (1.0 - r);
}

double sigmoid(double q) {
    if (q >= 0.0) return 1.0 / (1.0 + std::exp(-q));
    const double e = std::exp(q);
    return e / (1.0 + e);
}

Vec l2_normalize(ConstSpan v) {
    const double n = norm(v);
    if (!(n > kEpsNorm)) throw DegenerateInputError("l2_normalize: near-zero norm");
    Vec y(v.begin(), v.end());
    for (double& x : y) x /= n;
    return y;
}

Vec l2_normalize_backward(ConstSpan v, ConstSpan dy) {
    require_same_length(v, dy, "l2_normalize_backward");
    const double n = norm(v);
    if (!(n > kEpsNorm)) throw DegenerateInputError("l2_normalize_backward: near-zero norm");
    double ydy = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) ydy += v[i] / n * dy[i];
    Vec dv(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) dv[i] = (dy[i] - v[i] / n * ydy) / n;
    return dv;
}

double cosine(ConstSpan p, ConstSpan q) {
    require_same_length(p, q, "cosine");
    const double np = norm(p);
    const double nq = norm(q);
    if (!(np > kEpsNorm) || !(nq > kEpsNorm)) throw DegenerateInputError("cosine: zero vector");
    return std::clamp(dot(p, q) / (np * nq), -1.0, 1.0);
}

std::pair<Vec, Vec> cosine_backward(ConstSpan p, ConstSpan q) {
    require_same_length(p, q, "cosine_backward");
    const double np = norm(p);
    const double nq = norm(q);
    if (!(np > kEpsNorm) || !(nq > kEpsNorm)) throw DegenerateInputError("cosine_backward: zero vector");
    const double c = dot(p, q) / (np * nq);
    Vec dp(p.size()), dq(q.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        dp[i] = q[i] / (np * nq) - c * p[i] / (np * np);
        dq[i] = p[i] / (np * nq) - c * q[i] / (nq * nq);
    }
    return {std::move(dp), std::move(dq)};
}

void round_to_float(std::span<double> values) {
    for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

void round_to_float(ParamSet& params) {
    for (Parameter* p : params) round_to_float(p->value.data());
}

void sgd_step(ParamSet& params, double lr) {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("sgd_step: learning rate must be positive");
    for (const Parameter* p : params) {
        if (!all_finite(p->grad.data())) throw DivergedError("sgd_step: non-finite gradient in " + p->name);
    }
    for (Parameter* p : params) {
        auto& v = p->value.data();
        const auto& g = p->grad.data();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
    }
    params.zero_grad();
}

GradCheckResult grad_check(const Objective& objective, ParamSet& params, double h) {
    if (!(h >= 1e-5 && h <= 1e-3)) throw ConfigError("grad_check: step must lie in [1e-5, 1e-3]");
    params.zero_grad();
    const double base = objective(true);
    if (!std::isfinite(base)) throw DomainError("grad_check: non-finite loss");

    GradCheckResult result;
    for (Parameter* p : params) {
        auto& v = p->value.data();
        const auto& g = p->grad.data();
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double orig = v[i];
            v[i] = orig + h;
            const double up = objective(false);
            v[i] = orig - h;
            const double down = objective(false);
            v[i] = orig;
            if (!std::isfinite(up) || !std::isfinite(down)) throw DomainError("grad_check: non-finite loss");
            const double numeric = (up - down) / (2.0 * h);
            const double err = std::abs(g[i] - numeric) / std::max(1.0, std::abs(numeric));
            if (err > result.max_rel_error) {
                result.max_rel_error = err;
                result.worst_param = p->name;
                result.worst_index = i;
            }
        }
    }
    return result;
}

}  // namespace fvg
