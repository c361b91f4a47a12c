#include "lrnr/model.hpp"

#include <cmath>
#include <string>

namespace lrnr {

double Activation::value(double a) const { return std::tanh(a); }

double Activation::d1(double a) const {
    const double s = std::tanh(a);
    return 1.0 - s * s;
}

double Activation::d2(double a) const {
    const double s = std::tanh(a);
    return -2.0 * s * (1.0 - s * s);
}

std::size_t LrnrParams::max_width() const {
    std::size_t m = 0;
    for (std::size_t w : widths) m = std::max(m, w);
    return m;
}

void LrnrParams::validate() const {
    const std::size_t depth_l = ranks.size();
    require(widths.size() == depth_l + 1, "LrnrParams: widths must have depth+1 entries");
    require(u.size() == depth_l && v.size() == depth_l && b.size() == depth_l,
            "LrnrParams: factor count mismatch");
    for (std::size_t l = 0; l < depth_l; ++l) {
        require(ranks[l] >= 1, "LrnrParams: rank must be positive");
        require(ranks[l] <= std::min(widths[l + 1], widths[l]),
                "LrnrParams: rank exceeds min(M_l, M_{l-1})");
        require(u[l].rows == widths[l + 1] && u[l].cols == ranks[l],
                "LrnrParams: U shape mismatch at layer " + std::to_string(l + 1));
        require(v[l].rows == widths[l] && v[l].cols == ranks[l],
                "LrnrParams: V shape mismatch at layer " + std::to_string(l + 1));
        require(b[l].len() == widths[l + 1],
                "LrnrParams: b shape mismatch at layer " + std::to_string(l + 1));
    }
}

void FastParams::validate() const {
    const std::size_t depth_l = ranks.size();
    require(depth_l >= 2, "FastParams: need at least two layers");
    require(red_ranks.size() == depth_l - 1, "FastParams: red_ranks must have depth-1 entries");
    require(u_hat.size() == depth_l - 1 && b_hat.size() == depth_l - 1 &&
                v_hat.size() == depth_l - 1,
            "FastParams: inner factor count mismatch");
    require(v_in.cols == ranks[0], "FastParams: v_in cols != r_1");
    for (std::size_t l = 0; l < depth_l - 1; ++l) {
        require(u_hat[l].rows == red_ranks[l] && u_hat[l].cols == ranks[l],
                "FastParams: u_hat shape mismatch");
        require(b_hat[l].len() == red_ranks[l], "FastParams: b_hat shape mismatch");
        require(v_hat[l].rows == red_ranks[l] && v_hat[l].cols == ranks[l + 1],
                "FastParams: v_hat shape mismatch");
    }
    require(u_out.cols == ranks[depth_l - 1], "FastParams: u_out cols != r_L");
    require(b_out.len() == u_out.rows, "FastParams: b_out length mismatch");
}

void HyperParams::validate() const {
    require(!w.empty() && w.size() == b.size(), "HyperParams: layer count mismatch");
    require(w.front().cols == 3, "HyperParams: input dimension must be 3");
    for (std::size_t k = 0; k < w.size(); ++k) {
        require(b[k].len() == w[k].rows, "HyperParams: bias shape mismatch");
        if (k + 1 < w.size())
            require(w[k + 1].cols == w[k].rows, "HyperParams: widths do not chain");
    }
    require(w.back().rows == out_dim(), "HyperParams: output dim != sum of split");
}

DenseVector normalize_mu(const PdeParams& mu, const ParamDomain& box) {
    DenseVector out(3);
    for (std::size_t i = 0; i < 3; ++i) {
        const double extent = box.hi[i] - box.lo[i];
        out[i] = extent > 0.0 ? (mu[i] - box.lo[i]) / extent : 0.0;
    }
    return out;
}

namespace kernels {

void jet_affine_factored(const DenseMatrix& u, const double* s, const DenseMatrix& v,
                         const double* b, ConstJetView in, JetView out, double* y_out) {
    const std::size_t m_in = v.rows;
    const std::size_t r = v.cols;
    const std::size_t m_out = u.rows;
    double* yv = y_out;
    double* yx = y_out + r;
    double* yt = y_out + 2 * r;
    double* yw = y_out + 3 * r;
    for (std::size_t j = 0; j < 4 * r; ++j) y_out[j] = 0.0;
    for (std::size_t i = 0; i < m_in; ++i) {
        const double* row = v.row_ptr(i);
        const double av = in.v[i], ax = in.dx[i], at = in.dt[i], aw = in.dxx[i];
        for (std::size_t j = 0; j < r; ++j) {
            yv[j] += row[j] * av;
            yx[j] += row[j] * ax;
            yt[j] += row[j] * at;
            yw[j] += row[j] * aw;
        }
    }
    // y is kept unscaled (the reverse pass wants V^T in); the diag(s) factor
    // is folded into the U pass.
    for (std::size_t i = 0; i < m_out; ++i) {
        const double* row = u.row_ptr(i);
        double accv = 0.0, accx = 0.0, acct = 0.0, accw = 0.0;
        for (std::size_t j = 0; j < r; ++j) {
            const double us = row[j] * s[j];
            accv += us * yv[j];
            accx += us * yx[j];
            acct += us * yt[j];
            accw += us * yw[j];
        }
        out.v[i] = accv + (b ? b[i] : 0.0);
        out.dx[i] = accx;
        out.dt[i] = acct;
        out.dxx[i] = accw;
    }
}

void jet_affine_dense(const DenseMatrix& a, bool trans, const double* b, ConstJetView in,
                      JetView out) {
    if (!trans) {
        for (std::size_t i = 0; i < a.rows; ++i) {
            const double* row = a.row_ptr(i);
            double accv = 0.0, accx = 0.0, acct = 0.0, accw = 0.0;
            for (std::size_t j = 0; j < a.cols; ++j) {
                accv += row[j] * in.v[j];
                accx += row[j] * in.dx[j];
                acct += row[j] * in.dt[j];
                accw += row[j] * in.dxx[j];
            }
            out.v[i] = accv + (b ? b[i] : 0.0);
            out.dx[i] = accx;
            out.dt[i] = acct;
            out.dxx[i] = accw;
        }
    } else {
        for (std::size_t j = 0; j < a.cols; ++j) {
            out.v[j] = b ? b[j] : 0.0;
            out.dx[j] = 0.0;
            out.dt[j] = 0.0;
            out.dxx[j] = 0.0;
        }
        for (std::size_t i = 0; i < a.rows; ++i) {
            const double* row = a.row_ptr(i);
            const double av = in.v[i], ax = in.dx[i], at = in.dt[i], aw = in.dxx[i];
            for (std::size_t j = 0; j < a.cols; ++j) {
                out.v[j] += row[j] * av;
                out.dx[j] += row[j] * ax;
                out.dt[j] += row[j] * at;
                out.dxx[j] += row[j] * aw;
            }
        }
    }
}

void jet_scale(const double* s, ConstJetView in, JetView out) {
    for (std::size_t i = 0; i < in.n; ++i) {
        out.v[i] = s[i] * in.v[i];
        out.dx[i] = s[i] * in.dx[i];
        out.dt[i] = s[i] * in.dt[i];
        out.dxx[i] = s[i] * in.dxx[i];
    }
}

void jet_activation(const Activation& act, ConstJetView in, JetView out) {
    (void)act;  // Tanh is the only smooth activation wired in
    for (std::size_t i = 0; i < in.n; ++i) {
        const double sg = std::tanh(in.v[i]);
        const double d1 = 1.0 - sg * sg;
        const double d2 = -2.0 * sg * d1;
        out.v[i] = sg;
        out.dx[i] = d1 * in.dx[i];
        out.dt[i] = d1 * in.dt[i];
        out.dxx[i] = d2 * in.dx[i] * in.dx[i] + d1 * in.dxx[i];
    }
}

void value_affine_factored(const DenseMatrix& u, const double* s, const DenseMatrix& v,
                           const double* b, const double* in, double* out, double* y_scratch) {
    const std::size_t r = v.cols;
    for (std::size_t j = 0; j < r; ++j) y_scratch[j] = 0.0;
    for (std::size_t i = 0; i < v.rows; ++i) {
        const double* row = v.row_ptr(i);
        const double zi = in[i];
        for (std::size_t j = 0; j < r; ++j) y_scratch[j] += row[j] * zi;
    }
    for (std::size_t j = 0; j < r; ++j) y_scratch[j] *= s[j];
    for (std::size_t i = 0; i < u.rows; ++i) {
        const double* row = u.row_ptr(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < r; ++j) acc += row[j] * y_scratch[j];
        out[i] = acc + (b ? b[i] : 0.0);
    }
}

void value_affine_dense(const DenseMatrix& a, bool trans, const double* b, const double* in,
                        double* out) {
    if (!trans) {
        for (std::size_t i = 0; i < a.rows; ++i) {
            const double* row = a.row_ptr(i);
            double acc = 0.0;
            for (std::size_t j = 0; j < a.cols; ++j) acc += row[j] * in[j];
            out[i] = acc + (b ? b[i] : 0.0);
        }
    } else {
        for (std::size_t j = 0; j < a.cols; ++j) out[j] = b ? b[j] : 0.0;
        for (std::size_t i = 0; i < a.rows; ++i) {
            const double* row = a.row_ptr(i);
            const double zi = in[i];
            for (std::size_t j = 0; j < a.cols; ++j) out[j] += row[j] * zi;
        }
    }
}

void value_activation(const Activation& act, const double* in, double* out, std::size_t n) {
    (void)act;
    for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(in[i]);
}

}  // namespace kernels

namespace {

void check_coeffs(const LrnrParams& params, const Coefficients& s) {
    require(s.s.size() == params.depth(), "coefficients: layer count mismatch");
    for (std::size_t l = 0; l < params.depth(); ++l)
        require(s.s[l].len() == params.ranks[l], "coefficients: rank mismatch at layer " +
                                                     std::to_string(l + 1));
}

}  // namespace

DenseVector inr_forward(double x, double t, const LrnrParams& params, const Coefficients& s) {
    params.validate();
    check_coeffs(params, s);
    const std::size_t depth_l = params.depth();
    DenseVector z(2);
    z[0] = x;
    z[1] = t;
    std::vector<double> scratch;
    for (std::size_t l = 0; l < depth_l; ++l) {
        DenseVector a(params.widths[l + 1]);
        scratch.assign(params.ranks[l], 0.0);
        kernels::value_affine_factored(params.u[l], s.s[l].data.data(), params.v[l],
                                       params.b[l].data.data(), z.data.data(), a.data.data(),
                                       scratch.data());
        if (l + 1 < depth_l) {
            kernels::value_activation(params.act, a.data.data(), a.data.data(), a.len());
        }
        z = std::move(a);
    }
    return z;
}

DenseVector lrnr_forward(double x, double t, const LrnrParams& frozen, const Coefficients& s) {
    return inr_forward(x, t, frozen, s);
}

DenseVector fast_forward(double x, double t, const FastParams& fast, const Coefficients& s) {
    fast.validate();
    require(s.s.size() == fast.depth(), "fast_forward: coefficient layer count mismatch");
    const std::size_t depth_l = fast.depth();
    DenseVector in(2);
    in[0] = x;
    in[1] = t;
    DenseVector z(fast.ranks[0]);
    kernels::value_affine_dense(fast.v_in, true, nullptr, in.data.data(), z.data.data());
    for (std::size_t l = 0; l + 1 < depth_l; ++l) {
        require(s.s[l].len() == fast.ranks[l], "fast_forward: coefficient rank mismatch");
        DenseVector scaled(fast.ranks[l]);
        for (std::size_t j = 0; j < scaled.len(); ++j) scaled[j] = s.s[l][j] * z[j];
        DenseVector h(fast.red_ranks[l]);
        kernels::value_affine_dense(fast.u_hat[l], false, fast.b_hat[l].data.data(),
                                    scaled.data.data(), h.data.data());
        kernels::value_activation(fast.act, h.data.data(), h.data.data(), h.len());
        DenseVector next(fast.ranks[l + 1]);
        kernels::value_affine_dense(fast.v_hat[l], true, nullptr, h.data.data(),
                                    next.data.data());
        z = std::move(next);
    }
    DenseVector scaled(fast.ranks[depth_l - 1]);
    for (std::size_t j = 0; j < scaled.len(); ++j) scaled[j] = s.s[depth_l - 1][j] * z[j];
    DenseVector out(fast.u_out.rows);
    kernels::value_affine_dense(fast.u_out, false, fast.b_out.data.data(), scaled.data.data(),
                                out.data.data());
    return out;
}

Coefficients hyper_forward(const PdeParams& mu, const HyperParams& theta) {
    theta.validate();
    DenseVector z = normalize_mu(mu, theta.box);
    const std::size_t n_layers = theta.w.size();
    for (std::size_t k = 0; k < n_layers; ++k) {
        DenseVector a(theta.w[k].rows);
        kernels::value_affine_dense(theta.w[k], false, theta.b[k].data.data(), z.data.data(),
                                    a.data.data());
        if (k + 1 < n_layers) {
            kernels::value_activation(Activation{}, a.data.data(), a.data.data(), a.len());
        } else {
            for (double& val : a.data) val = val > 0.0 ? val : 0.0;
        }
        z = std::move(a);
    }
    Coefficients out;
    std::size_t ofs = 0;
    for (std::size_t r : theta.split) {
        DenseVector sl(r);
        for (std::size_t j = 0; j < r; ++j) sl[j] = z[ofs + j];
        ofs += r;
        out.s.push_back(std::move(sl));
    }
    return out;
}

DenseVector meta_forward(double x, double t, const PdeParams& mu, const LrnrParams& params,
                         const HyperParams& theta) {
    return lrnr_forward(x, t, params, hyper_forward(mu, theta));
}

namespace {

Jet make_input_jet(double x, double t) {
    Jet j;
    j.value = DenseVector{x, t};
    j.dx = DenseVector{1.0, 0.0};
    j.dt = DenseVector{0.0, 1.0};
    j.dxx = DenseVector{0.0, 0.0};
    return j;
}

kernels::ConstJetView view(const Jet& j) {
    return {j.value.data.data(), j.dx.data.data(), j.dt.data.data(), j.dxx.data.data(),
            j.value.len()};
}

kernels::JetView view_mut(Jet& j) {
    return {j.value.data.data(), j.dx.data.data(), j.dt.data.data(), j.dxx.data.data(),
            j.value.len()};
}

Jet make_jet(std::size_t n) {
    Jet j;
    j.value = DenseVector(n);
    j.dx = DenseVector(n);
    j.dt = DenseVector(n);
    j.dxx = DenseVector(n);
    return j;
}

}  // namespace

Jet jet_forward(double x, double t, const LrnrParams& params, const Coefficients& s) {
    params.validate();
    check_coeffs(params, s);
    const std::size_t depth_l = params.depth();
    Jet z = make_input_jet(x, t);
    std::vector<double> y_scratch;
    for (std::size_t l = 0; l < depth_l; ++l) {
        Jet a = make_jet(params.widths[l + 1]);
        y_scratch.assign(4 * params.ranks[l], 0.0);
        kernels::jet_affine_factored(params.u[l], s.s[l].data.data(), params.v[l],
                                     params.b[l].data.data(), view(z), view_mut(a),
                                     y_scratch.data());
        if (l + 1 < depth_l) {
            Jet h = make_jet(a.value.len());
            kernels::jet_activation(params.act, view(a), view_mut(h));
            z = std::move(h);
        } else {
            z = std::move(a);
        }
    }
    return z;
}

Jet jet_forward(double x, double t, const FastParams& fast, const Coefficients& s) {
    fast.validate();
    require(s.s.size() == fast.depth(), "jet_forward(fast): coefficient layer count mismatch");
    const std::size_t depth_l = fast.depth();
    Jet in = make_input_jet(x, t);
    Jet z = make_jet(fast.ranks[0]);
    kernels::jet_affine_dense(fast.v_in, true, nullptr, view(in), view_mut(z));
    for (std::size_t l = 0; l + 1 < depth_l; ++l) {
        Jet scaled = make_jet(fast.ranks[l]);
        kernels::jet_scale(s.s[l].data.data(), view(z), view_mut(scaled));
        Jet h = make_jet(fast.red_ranks[l]);
        kernels::jet_affine_dense(fast.u_hat[l], false, fast.b_hat[l].data.data(), view(scaled),
                                  view_mut(h));
        Jet act = make_jet(fast.red_ranks[l]);
        kernels::jet_activation(fast.act, view(h), view_mut(act));
        Jet next = make_jet(fast.ranks[l + 1]);
        kernels::jet_affine_dense(fast.v_hat[l], true, nullptr, view(act), view_mut(next));
        z = std::move(next);
    }
    Jet scaled = make_jet(fast.ranks[depth_l - 1]);
    kernels::jet_scale(s.s[depth_l - 1].data.data(), view(z), view_mut(scaled));
    Jet out = make_jet(fast.u_out.rows);
    kernels::jet_affine_dense(fast.u_out, false, fast.b_out.data.data(), view(scaled),
                              view_mut(out));
    return out;
}

std::vector<DenseVector> hidden_states(double x, double t, const LrnrParams& params,
                                       const Coefficients& s) {
    params.validate();
    check_coeffs(params, s);
    const std::size_t depth_l = params.depth();
    std::vector<DenseVector> states;
    DenseVector z(2);
    z[0] = x;
    z[1] = t;
    std::vector<double> scratch;
    for (std::size_t l = 0; l + 1 < depth_l; ++l) {
        DenseVector a(params.widths[l + 1]);
        scratch.assign(params.ranks[l], 0.0);
        kernels::value_affine_factored(params.u[l], s.s[l].data.data(), params.v[l],
                                       params.b[l].data.data(), z.data.data(), a.data.data(),
                                       scratch.data());
        kernels::value_activation(params.act, a.data.data(), a.data.data(), a.len());
        states.push_back(a);
        z = std::move(a);
    }
    return states;
}

namespace {

// Modified Gram-Schmidt on the columns; assumes rows >= cols.
void orthonormalize_columns(DenseMatrix& m) {
    for (std::size_t j = 0; j < m.cols; ++j) {
        for (std::size_t k = 0; k < j; ++k) {
            double dot = 0.0;
            for (std::size_t i = 0; i < m.rows; ++i) dot += m.at(i, j) * m.at(i, k);
            for (std::size_t i = 0; i < m.rows; ++i) m.at(i, j) -= dot * m.at(i, k);
        }
        double nrm = 0.0;
        for (std::size_t i = 0; i < m.rows; ++i) nrm += m.at(i, j) * m.at(i, j);
        nrm = std::sqrt(nrm);
        if (nrm < 1e-12) {
            // Degenerate draw; re-seat on a canonical axis.
            for (std::size_t i = 0; i < m.rows; ++i) m.at(i, j) = (i == j % m.rows) ? 1.0 : 0.0;
        } else {
            for (std::size_t i = 0; i < m.rows; ++i) m.at(i, j) /= nrm;
        }
    }
}

}  // namespace

LrnrParams make_lrnr_params(const std::vector<std::size_t>& widths,
                            const std::vector<std::size_t>& ranks, Rng& rng,
                            bool orthonormal_bases, double bias_scale) {
    LrnrParams p;
    p.widths = widths;
    p.ranks = ranks;
    const std::size_t depth_l = ranks.size();
    for (std::size_t l = 0; l < depth_l; ++l) {
        DenseMatrix u(widths[l + 1], ranks[l]);
        for (double& val : u.data) val = rng.normal();
        DenseMatrix v(widths[l], ranks[l]);
        for (double& val : v.data) val = rng.normal();
        if (orthonormal_bases) {
            orthonormalize_columns(u);
            orthonormalize_columns(v);
        }
        DenseVector bias(widths[l + 1]);
        for (double& val : bias.data) val = rng.uniform_in(-bias_scale, bias_scale);
        p.u.push_back(std::move(u));
        p.v.push_back(std::move(v));
        p.b.push_back(std::move(bias));
    }
    p.validate();
    return p;
}

HyperParams make_hyper_params(const std::vector<std::size_t>& split, std::size_t hidden_depth,
                              std::size_t hidden_width, const ParamDomain& box, Rng& rng,
                              double out_weight_scale, double out_bias) {
    HyperParams h;
    h.split = split;
    h.box = box;
    const std::size_t out = h.out_dim();
    std::size_t fan_in = 3;
    for (std::size_t k = 0; k < hidden_depth; ++k) {
        DenseMatrix w(hidden_width, fan_in);
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + hidden_width));
        for (double& val : w.data) val = rng.uniform_in(-limit, limit);
        h.w.push_back(std::move(w));
        h.b.emplace_back(hidden_width);
        fan_in = hidden_width;
    }
    DenseMatrix w(out, fan_in);
    for (double& val : w.data) val = out_weight_scale * rng.normal();
    h.w.push_back(std::move(w));
    DenseVector bias(out);
    for (double& val : bias.data) val = out_bias;
    h.b.push_back(std::move(bias));
    h.validate();
    return h;
}

Coefficients make_coefficients(const std::vector<std::size_t>& ranks, Rng& rng, double lo,
                               double hi) {
    Coefficients c;
    for (std::size_t r : ranks) {
        DenseVector s(r);
        for (double& val : s.data) val = rng.uniform_in(lo, hi);
        c.s.push_back(std::move(s));
    }
    return c;
}

}  // namespace lrnr
