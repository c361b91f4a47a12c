#include "lrnr/autodiff.hpp"

#include <cmath>

namespace lrnr {

void Tape::reserve(std::size_t doubles) {
    val_.reserve(doubles);
    grd_.reserve(doubles);
    nodes_.reserve(256);
}

std::size_t Tape::alloc(std::size_t len) {
    const std::size_t ofs = val_.size();
    val_.resize(ofs + len);
    grd_.resize(ofs + len, 0.0);
    return ofs;
}

std::size_t Tape::alloc_extra(std::size_t len) {
    const std::size_t ofs = extra_.size();
    extra_.resize(ofs + len);
    return ofs;
}

NodeId Tape::push(Node n) {
    max_node_len_ = std::max(max_node_len_, n.n);
    nodes_.push_back(n);
    return static_cast<NodeId>(nodes_.size() - 1);
}

kernels::JetView Tape::jet_view(Node& n) {
    double* base = val_.data() + n.val_ofs;
    return {base, base + n.n, base + 2 * n.n, base + 3 * n.n, n.n};
}

kernels::ConstJetView Tape::jet_cview(const Node& n) const {
    const double* base = val_.data() + n.val_ofs;
    return {base, base + n.n, base + 2 * n.n, base + 3 * n.n, n.n};
}

kernels::JetView Tape::jet_grad_view(Node& n) {
    double* base = grd_.data() + n.val_ofs;
    return {base, base + n.n, base + 2 * n.n, base + 3 * n.n, n.n};
}

int Tape::bind_matrix(const DenseMatrix& m, bool trainable) {
    auto it = mat_cache_.find(&m);
    if (it != mat_cache_.end()) return it->second;
    MatSlot slot;
    slot.m = &m;
    slot.trainable = trainable;
    if (trainable) slot.grad.assign(m.data.size(), 0.0);
    mats_.push_back(std::move(slot));
    max_matrix_elems_ = std::max(max_matrix_elems_, m.data.size());
    const int id = static_cast<int>(mats_.size() - 1);
    mat_cache_.emplace(&m, id);
    return id;
}

NodeId Tape::leaf_vector(const double* data, std::size_t n, bool trainable) {
    Node nd;
    nd.op = Op::LeafVec;
    nd.trainable = trainable;
    nd.n = n;
    nd.val_ofs = alloc(n);
    for (std::size_t i = 0; i < n; ++i) val_[nd.val_ofs + i] = data[i];
    return push(nd);
}

NodeId Tape::leaf_jet_input(double x, double t) {
    Node nd;
    nd.op = Op::LeafJet;
    nd.n = 2;
    nd.val_ofs = alloc(8);
    double* base = val_.data() + nd.val_ofs;
    base[0] = x;
    base[1] = t;
    base[2] = 1.0;  // dx
    base[3] = 0.0;
    base[4] = 0.0;  // dt
    base[5] = 1.0;
    base[6] = 0.0;  // dxx
    base[7] = 0.0;
    return push(nd);
}

NodeId Tape::affine_factored(int u_slot, NodeId s_vec, int v_slot, NodeId b_vec, NodeId in_jet,
                             int tag) {
    const DenseMatrix& u = *mats_[u_slot].m;
    const DenseMatrix& v = *mats_[v_slot].m;
    Node nd;
    nd.op = Op::AffineFactoredJet;
    nd.tag = tag;
    nd.in0 = in_jet;
    nd.vec0 = s_vec;
    nd.vec1 = b_vec;
    nd.mat = u_slot;
    nd.mat2 = v_slot;
    nd.n = u.rows;
    nd.val_ofs = alloc(4 * nd.n);
    nd.extra_len = 4 * u.cols;
    nd.extra_ofs = alloc_extra(nd.extra_len);
    const Node& in = nodes_[in_jet];
    const Node& sn = nodes_[s_vec];
    const Node& bn = nodes_[b_vec];
    kernels::jet_affine_factored(u, val_.data() + sn.val_ofs, v, val_.data() + bn.val_ofs,
                                 jet_cview(in), jet_view(nd), extra_.data() + nd.extra_ofs);
    return push(nd);
}

NodeId Tape::affine_dense_jet(int a_slot, bool trans, NodeId b_vec, NodeId in_jet, int tag) {
    const DenseMatrix& a = *mats_[a_slot].m;
    Node nd;
    nd.op = Op::AffineDenseJet;
    nd.trans = trans;
    nd.tag = tag;
    nd.in0 = in_jet;
    nd.vec0 = b_vec;
    nd.mat = a_slot;
    nd.n = trans ? a.cols : a.rows;
    nd.val_ofs = alloc(4 * nd.n);
    const Node& in = nodes_[in_jet];
    const double* b = b_vec >= 0 ? val_.data() + nodes_[b_vec].val_ofs : nullptr;
    kernels::jet_affine_dense(a, trans, b, jet_cview(in), jet_view(nd));
    return push(nd);
}

NodeId Tape::scale_jet(NodeId s_vec, NodeId in_jet, int tag) {
    const Node& in = nodes_[in_jet];
    Node nd;
    nd.op = Op::ScaleJet;
    nd.tag = tag;
    nd.in0 = in_jet;
    nd.vec0 = s_vec;
    nd.n = in.n;
    nd.val_ofs = alloc(4 * nd.n);
    kernels::jet_scale(val_.data() + nodes_[s_vec].val_ofs, jet_cview(nodes_[in_jet]),
                       jet_view(nd));
    return push(nd);
}

NodeId Tape::activation_jet(NodeId in_jet, int tag) {
    const Node& in = nodes_[in_jet];
    Node nd;
    nd.op = Op::ActivationJet;
    nd.tag = tag;
    nd.in0 = in_jet;
    nd.n = in.n;
    nd.val_ofs = alloc(4 * nd.n);
    kernels::jet_activation(Activation{}, jet_cview(nodes_[in_jet]), jet_view(nd));
    return push(nd);
}

NodeId Tape::affine_dense_vec(int w_slot, NodeId b_vec, NodeId in_vec, int tag) {
    const DenseMatrix& w = *mats_[w_slot].m;
    Node nd;
    nd.op = Op::AffineDenseVec;
    nd.tag = tag;
    nd.in0 = in_vec;
    nd.vec0 = b_vec;
    nd.mat = w_slot;
    nd.n = w.rows;
    nd.val_ofs = alloc(nd.n);
    const double* b = b_vec >= 0 ? val_.data() + nodes_[b_vec].val_ofs : nullptr;
    kernels::value_affine_dense(w, false, b, val_.data() + nodes_[in_vec].val_ofs,
                                val_.data() + nd.val_ofs);
    return push(nd);
}

NodeId Tape::tanh_vec(NodeId in, int tag) {
    const Node& inn = nodes_[in];
    Node nd;
    nd.op = Op::TanhVec;
    nd.tag = tag;
    nd.in0 = in;
    nd.n = inn.n;
    nd.val_ofs = alloc(nd.n);
    kernels::value_activation(Activation{}, val_.data() + nodes_[in].val_ofs,
                              val_.data() + nd.val_ofs, nd.n);
    return push(nd);
}

NodeId Tape::relu_vec(NodeId in, int tag) {
    const Node& inn = nodes_[in];
    Node nd;
    nd.op = Op::ReluVec;
    nd.tag = tag;
    nd.in0 = in;
    nd.n = inn.n;
    nd.val_ofs = alloc(nd.n);
    const double* src = val_.data() + nodes_[in].val_ofs;
    double* dst = val_.data() + nd.val_ofs;
    for (std::size_t i = 0; i < nd.n; ++i) dst[i] = src[i] > 0.0 ? src[i] : 0.0;
    return push(nd);
}

NodeId Tape::slice_vec(NodeId in, std::size_t offset, std::size_t len) {
    Node nd;
    nd.op = Op::SliceVec;
    nd.in0 = in;
    nd.n = len;
    nd.list_ofs = offset;
    nd.val_ofs = alloc(len);
    const double* src = val_.data() + nodes_[in].val_ofs + offset;
    double* dst = val_.data() + nd.val_ofs;
    for (std::size_t i = 0; i < len; ++i) dst[i] = src[i];
    return push(nd);
}

NodeId Tape::pick_value(NodeId jet, std::size_t idx) {
    Node nd;
    nd.op = Op::PickValue;
    nd.in0 = jet;
    nd.n = 1;
    nd.list_ofs = idx;
    nd.val_ofs = alloc(1);
    val_[nd.val_ofs] = val_[nodes_[jet].val_ofs + idx];
    return push(nd);
}

NodeId Tape::residual_cdr(NodeId jet, const PdeParams& mu) {
    const Node& in = nodes_[jet];
    require(in.n == 1, "residual_cdr: expected scalar-output jet");
    Node nd;
    nd.op = Op::ResidualCdr;
    nd.in0 = jet;
    nd.n = 1;
    nd.c0 = mu.mu1;
    nd.c1 = mu.mu2;
    nd.c2 = mu.mu3;
    nd.val_ofs = alloc(1);
    const double* base = val_.data() + nodes_[jet].val_ofs;
    const double uval = base[0], ux = base[1], ut = base[2], uxx = base[3];
    val_[nd.val_ofs] = ut + mu.mu1 * ux - mu.mu2 * uxx - mu.mu3 * uval * (1.0 - uval);
    return push(nd);
}

NodeId Tape::sub_const(NodeId a, double c) {
    Node nd;
    nd.op = Op::SubConst;
    nd.in0 = a;
    nd.n = 1;
    nd.c0 = c;
    nd.val_ofs = alloc(1);
    val_[nd.val_ofs] = val_[nodes_[a].val_ofs] - c;
    return push(nd);
}

NodeId Tape::sub(NodeId a, NodeId b) {
    Node nd;
    nd.op = Op::Sub;
    nd.in0 = a;
    nd.in1 = b;
    nd.n = 1;
    nd.val_ofs = alloc(1);
    val_[nd.val_ofs] = val_[nodes_[a].val_ofs] - val_[nodes_[b].val_ofs];
    return push(nd);
}

NodeId Tape::add(NodeId a, NodeId b) {
    Node nd;
    nd.op = Op::Add;
    nd.in0 = a;
    nd.in1 = b;
    nd.n = 1;
    nd.val_ofs = alloc(1);
    val_[nd.val_ofs] = val_[nodes_[a].val_ofs] + val_[nodes_[b].val_ofs];
    return push(nd);
}

NodeId Tape::square(NodeId a) {
    Node nd;
    nd.op = Op::Square;
    nd.in0 = a;
    nd.n = 1;
    nd.val_ofs = alloc(1);
    const double x = val_[nodes_[a].val_ofs];
    val_[nd.val_ofs] = x * x;
    return push(nd);
}

NodeId Tape::abs_val(NodeId a) {
    Node nd;
    nd.op = Op::Abs;
    nd.in0 = a;
    nd.n = 1;
    nd.val_ofs = alloc(1);
    val_[nd.val_ofs] = std::fabs(val_[nodes_[a].val_ofs]);
    return push(nd);
}

NodeId Tape::scale(NodeId a, double w) {
    Node nd;
    nd.op = Op::Scale;
    nd.in0 = a;
    nd.n = 1;
    nd.c0 = w;
    nd.val_ofs = alloc(1);
    val_[nd.val_ofs] = w * val_[nodes_[a].val_ofs];
    return push(nd);
}

NodeId Tape::weighted_sum(const std::vector<NodeId>& ids, const std::vector<double>& weights) {
    require(ids.size() == weights.size(), "weighted_sum: size mismatch");
    Node nd;
    nd.op = Op::WeightedSum;
    nd.n = 1;
    nd.list_ofs = list_ids_.size();
    nd.list_len = ids.size();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        list_ids_.push_back(ids[i]);
        list_w_.push_back(weights[i]);
    }
    nd.val_ofs = alloc(1);
    double acc = 0.0;
    for (std::size_t i = 0; i < ids.size(); ++i) acc += weights[i] * val_[nodes_[ids[i]].val_ofs];
    val_[nd.val_ofs] = acc;
    return push(nd);
}

NodeId Tape::gram_ortho_penalty(int mat_slot) {
    const DenseMatrix& a = *mats_[mat_slot].m;
    const std::size_t r = a.cols;
    Node nd;
    nd.op = Op::GramOrtho;
    nd.mat = mat_slot;
    nd.n = 1;
    nd.extra_len = r * r;
    nd.extra_ofs = alloc_extra(nd.extra_len);
    nd.val_ofs = alloc(1);
    double* e = extra_.data() + nd.extra_ofs;
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < r; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < a.rows; ++k) dot += a.at(k, i) * a.at(k, j);
            e[i * r + j] = dot - (i == j ? 1.0 : 0.0);
        }
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < r * r; ++i) acc += e[i] * e[i];
    val_[nd.val_ofs] = acc;
    return push(nd);
}

NodeId Tape::banded_decay_penalty(NodeId vec, double gamma) {
    const Node& in = nodes_[vec];
    Node nd;
    nd.op = Op::BandedDecay;
    nd.in0 = vec;
    nd.n = 1;
    nd.c0 = gamma;
    nd.val_ofs = alloc(1);
    const double* f = val_.data() + nodes_[vec].val_ofs;
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < in.n; ++i) {
        const double arg = -f[i] + gamma * f[i + 1];
        if (arg > 0.0) acc += arg;
    }
    val_[nd.val_ofs] = acc;
    return push(nd);
}

NodeId Tape::l1_to_target(NodeId vec, const double* target, std::size_t n) {
    const Node& in = nodes_[vec];
    require(in.n == n, "l1_to_target: length mismatch");
    Node nd;
    nd.op = Op::L1ToTarget;
    nd.in0 = vec;
    nd.n = 1;
    nd.extra_len = n;
    nd.extra_ofs = alloc_extra(n);
    nd.val_ofs = alloc(1);
    for (std::size_t i = 0; i < n; ++i) extra_[nd.extra_ofs + i] = target[i];
    const double* v = val_.data() + nodes_[vec].val_ofs;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += std::fabs(v[i] - target[i]);
    val_[nd.val_ofs] = acc;
    return push(nd);
}

NodeId Tape::half_sq_norm(NodeId vec) {
    const Node& in = nodes_[vec];
    Node nd;
    nd.op = Op::HalfSqNorm;
    nd.in0 = vec;
    nd.n = 1;
    nd.val_ofs = alloc(1);
    const double* v = val_.data() + nodes_[vec].val_ofs;
    double acc = 0.0;
    for (std::size_t i = 0; i < in.n; ++i) acc += v[i] * v[i];
    val_[nd.val_ofs] = 0.5 * acc;
    return push(nd);
}

NodeId Tape::dot_const(NodeId vec, const double* c, std::size_t n) {
    const Node& in = nodes_[vec];
    require(in.n == n, "dot_const: length mismatch");
    Node nd;
    nd.op = Op::DotConst;
    nd.in0 = vec;
    nd.n = 1;
    nd.extra_len = n;
    nd.extra_ofs = alloc_extra(n);
    nd.val_ofs = alloc(1);
    for (std::size_t i = 0; i < n; ++i) extra_[nd.extra_ofs + i] = c[i];
    const double* v = val_.data() + nodes_[vec].val_ofs;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += c[i] * v[i];
    val_[nd.val_ofs] = acc;
    return push(nd);
}

double Tape::value(NodeId id) const { return val_[nodes_[id].val_ofs]; }

const double* Tape::vector_value(NodeId id) const { return val_.data() + nodes_[id].val_ofs; }

std::size_t Tape::node_len(NodeId id) const { return nodes_[id].n; }

const double* Tape::leaf_grad(NodeId leaf) const { return grd_.data() + nodes_[leaf].val_ofs; }

const std::vector<double>& Tape::matrix_grad(int slot) const { return mats_[slot].grad; }

void Tape::clear_param_grads() {
    for (auto& m : mats_) {
        for (double& g : m.grad) g = 0.0;
    }
    // Leaves live below the watermark; zero their grad region.
    for (std::size_t i = 0; i < wm_val_; ++i) grd_[i] = 0.0;
}

void Tape::set_watermark() {
    wm_nodes_ = nodes_.size();
    wm_val_ = val_.size();
    wm_extra_ = extra_.size();
    wm_list_ = list_ids_.size();
}

void Tape::reset_to_watermark() {
    nodes_.resize(wm_nodes_);
    val_.resize(wm_val_);
    grd_.resize(wm_val_);
    extra_.resize(wm_extra_);
    list_ids_.resize(wm_list_);
    list_w_.resize(wm_list_);
}

void Tape::check_finite(NodeId root) const {
    if (std::isfinite(val_[nodes_[root].val_ofs])) return;
    for (const Node& n : nodes_) {
        const std::size_t len = (n.op == Op::AffineFactoredJet || n.op == Op::AffineDenseJet ||
                                 n.op == Op::ScaleJet || n.op == Op::ActivationJet ||
                                 n.op == Op::LeafJet)
                                    ? 4 * n.n
                                    : n.n;
        for (std::size_t i = 0; i < len; ++i) {
            if (!std::isfinite(val_[n.val_ofs + i])) throw NonFiniteError(n.tag);
        }
    }
    throw NonFiniteError(-1);
}

void Tape::backward(NodeId root, double seed) {
    grd_[nodes_[root].val_ofs] += seed;
    for (NodeId i = root; i >= 0; --i) backward_node(nodes_[i]);
}

void Tape::backward_node(Node& n) {
    switch (n.op) {
        case Op::LeafVec:
        case Op::LeafJet:
            return;
        case Op::AffineFactoredJet: {
            const DenseMatrix& u = *mats_[n.mat].m;
            const DenseMatrix& v = *mats_[n.mat2].m;
            const std::size_t r = u.cols;
            const std::size_t m_out = u.rows;
            const std::size_t m_in = v.rows;
            Node& in = nodes_[n.in0];
            const double* s = val_.data() + nodes_[n.vec0].val_ofs;
            const double* y = extra_.data() + n.extra_ofs;  // unscaled V^T z, 4 blocks
            if (scratch_.size() < 12 * r) scratch_.assign(12 * r, 0.0);
            double* t = scratch_.data();        // U^T g, 4 blocks
            double* sy = scratch_.data() + 4 * r;  // s ⊙ y
            double* st = scratch_.data() + 8 * r;  // s ⊙ t
            for (std::size_t j = 0; j < 4 * r; ++j) t[j] = 0.0;
            const double* gv = grd_.data() + n.val_ofs;
            const double* gx = gv + n.n;
            const double* gt = gv + 2 * n.n;
            const double* gw = gv + 3 * n.n;
            for (std::size_t i = 0; i < m_out; ++i) {
                const double* row = u.row_ptr(i);
                const double a = gv[i], bx = gx[i], ct = gt[i], dw = gw[i];
                for (std::size_t j = 0; j < r; ++j) {
                    t[j] += row[j] * a;
                    t[r + j] += row[j] * bx;
                    t[2 * r + j] += row[j] * ct;
                    t[3 * r + j] += row[j] * dw;
                }
            }
            // bias gradient (value slot only)
            if (nodes_[n.vec1].trainable) {
                double* bg = vec_grad(nodes_[n.vec1]);
                for (std::size_t i = 0; i < m_out; ++i) bg[i] += gv[i];
            }
            // coefficient gradient: ds_j = sum_slots t_slot[j] * y_slot[j]
            {
                double* sg = vec_grad(nodes_[n.vec0]);
                for (std::size_t j = 0; j < r; ++j) {
                    sg[j] += t[j] * y[j] + t[r + j] * y[r + j] + t[2 * r + j] * y[2 * r + j] +
                             t[3 * r + j] * y[3 * r + j];
                }
            }
            for (std::size_t j = 0; j < r; ++j) {
                sy[j] = s[j] * y[j];
                sy[r + j] = s[j] * y[r + j];
                sy[2 * r + j] = s[j] * y[2 * r + j];
                sy[3 * r + j] = s[j] * y[3 * r + j];
                st[j] = s[j] * t[j];
                st[r + j] = s[j] * t[r + j];
                st[2 * r + j] = s[j] * t[2 * r + j];
                st[3 * r + j] = s[j] * t[3 * r + j];
            }
            if (mats_[n.mat].trainable) {
                double* ug = mats_[n.mat].grad.data();
                for (std::size_t i = 0; i < m_out; ++i) {
                    double* grow = ug + i * r;
                    const double a = gv[i], bx = gx[i], ct = gt[i], dw = gw[i];
                    for (std::size_t j = 0; j < r; ++j) {
                        grow[j] += a * sy[j] + bx * sy[r + j] + ct * sy[2 * r + j] +
                                   dw * sy[3 * r + j];
                    }
                }
            }
            // input gradient dz = V (s ⊙ t) per slot; V gradient fused.
            kernels::JetView ing = jet_grad_view(in);
            kernels::ConstJetView inv = jet_cview(in);
            const bool vtrain = mats_[n.mat2].trainable;
            double* vg = vtrain ? mats_[n.mat2].grad.data() : nullptr;
            for (std::size_t i = 0; i < m_in; ++i) {
                const double* row = v.row_ptr(i);
                double av = 0.0, ax = 0.0, at2 = 0.0, aw = 0.0;
                for (std::size_t j = 0; j < r; ++j) {
                    av += row[j] * st[j];
                    ax += row[j] * st[r + j];
                    at2 += row[j] * st[2 * r + j];
                    aw += row[j] * st[3 * r + j];
                }
                ing.v[i] += av;
                ing.dx[i] += ax;
                ing.dt[i] += at2;
                ing.dxx[i] += aw;
                if (vtrain) {
                    double* grow = vg + i * r;
                    const double zv = inv.v[i], zx = inv.dx[i], zt = inv.dt[i], zw = inv.dxx[i];
                    for (std::size_t j = 0; j < r; ++j) {
                        grow[j] += zv * st[j] + zx * st[r + j] + zt * st[2 * r + j] +
                                   zw * st[3 * r + j];
                    }
                }
            }
            return;
        }
        case Op::AffineDenseJet: {
            const DenseMatrix& a = *mats_[n.mat].m;
            Node& in = nodes_[n.in0];
            kernels::JetView ing = jet_grad_view(in);
            kernels::ConstJetView inv = jet_cview(in);
            const double* gv = grd_.data() + n.val_ofs;
            const double* gx = gv + n.n;
            const double* gt = gv + 2 * n.n;
            const double* gw = gv + 3 * n.n;
            const bool atrain = mats_[n.mat].trainable;
            double* ag = atrain ? mats_[n.mat].grad.data() : nullptr;
            if (!n.trans) {
                // out_i = sum_j A_ij in_j (+ b_i)
                for (std::size_t i = 0; i < a.rows; ++i) {
                    const double* row = a.row_ptr(i);
                    const double cv = gv[i], cx = gx[i], ct = gt[i], cw = gw[i];
                    double* grow = atrain ? ag + i * a.cols : nullptr;
                    for (std::size_t j = 0; j < a.cols; ++j) {
                        ing.v[j] += row[j] * cv;
                        ing.dx[j] += row[j] * cx;
                        ing.dt[j] += row[j] * ct;
                        ing.dxx[j] += row[j] * cw;
                        if (atrain) {
                            grow[j] += cv * inv.v[j] + cx * inv.dx[j] + ct * inv.dt[j] +
                                       cw * inv.dxx[j];
                        }
                    }
                }
                if (n.vec0 >= 0 && nodes_[n.vec0].trainable) {
                    double* bg = vec_grad(nodes_[n.vec0]);
                    for (std::size_t i = 0; i < a.rows; ++i) bg[i] += gv[i];
                }
            } else {
                // out_j = sum_i A_ij in_i (+ b_j)
                for (std::size_t i = 0; i < a.rows; ++i) {
                    const double* row = a.row_ptr(i);
                    double av = 0.0, ax = 0.0, at2 = 0.0, aw = 0.0;
                    double* grow = atrain ? ag + i * a.cols : nullptr;
                    const double zv = inv.v[i], zx = inv.dx[i], zt = inv.dt[i], zw = inv.dxx[i];
                    for (std::size_t j = 0; j < a.cols; ++j) {
                        av += row[j] * gv[j];
                        ax += row[j] * gx[j];
                        at2 += row[j] * gt[j];
                        aw += row[j] * gw[j];
                        if (atrain) {
                            grow[j] += zv * gv[j] + zx * gx[j] + zt * gt[j] + zw * gw[j];
                        }
                    }
                    ing.v[i] += av;
                    ing.dx[i] += ax;
                    ing.dt[i] += at2;
                    ing.dxx[i] += aw;
                }
                if (n.vec0 >= 0 && nodes_[n.vec0].trainable) {
                    double* bg = vec_grad(nodes_[n.vec0]);
                    for (std::size_t j = 0; j < a.cols; ++j) bg[j] += gv[j];
                }
            }
            return;
        }
        case Op::ScaleJet: {
            Node& in = nodes_[n.in0];
            const double* s = val_.data() + nodes_[n.vec0].val_ofs;
            double* sg = vec_grad(nodes_[n.vec0]);
            kernels::JetView ing = jet_grad_view(in);
            kernels::ConstJetView inv = jet_cview(in);
            const double* gv = grd_.data() + n.val_ofs;
            const double* gx = gv + n.n;
            const double* gt = gv + 2 * n.n;
            const double* gw = gv + 3 * n.n;
            for (std::size_t i = 0; i < n.n; ++i) {
                ing.v[i] += s[i] * gv[i];
                ing.dx[i] += s[i] * gx[i];
                ing.dt[i] += s[i] * gt[i];
                ing.dxx[i] += s[i] * gw[i];
                sg[i] += inv.v[i] * gv[i] + inv.dx[i] * gx[i] + inv.dt[i] * gt[i] +
                         inv.dxx[i] * gw[i];
            }
            return;
        }
        case Op::ActivationJet: {
            Node& in = nodes_[n.in0];
            kernels::JetView ing = jet_grad_view(in);
            kernels::ConstJetView inv = jet_cview(in);
            const double* sig = val_.data() + n.val_ofs;  // value slot = sigma(a)
            const double* gv = grd_.data() + n.val_ofs;
            const double* gx = gv + n.n;
            const double* gt = gv + 2 * n.n;
            const double* gw = gv + 3 * n.n;
            for (std::size_t i = 0; i < n.n; ++i) {
                const double sg = sig[i];
                const double d1 = Activation::d1_from_value(sg);
                const double d2 = Activation::d2_from_value(sg);
                const double d3 = Activation::d3_from_value(sg);
                const double ax = inv.dx[i], at2 = inv.dt[i], aw = inv.dxx[i];
                ing.v[i] += gv[i] * d1 + gx[i] * d2 * ax + gt[i] * d2 * at2 +
                            gw[i] * (d3 * ax * ax + d2 * aw);
                ing.dx[i] += gx[i] * d1 + gw[i] * 2.0 * d2 * ax;
                ing.dt[i] += gt[i] * d1;
                ing.dxx[i] += gw[i] * d1;
            }
            return;
        }
        case Op::AffineDenseVec: {
            const DenseMatrix& w = *mats_[n.mat].m;
            Node& in = nodes_[n.in0];
            double* ing = vec_grad(in);
            const double* inv = val_.data() + in.val_ofs;
            const double* g = grd_.data() + n.val_ofs;
            const bool wtrain = mats_[n.mat].trainable;
            double* wg = wtrain ? mats_[n.mat].grad.data() : nullptr;
            for (std::size_t i = 0; i < w.rows; ++i) {
                const double* row = w.row_ptr(i);
                const double gi = g[i];
                double* grow = wtrain ? wg + i * w.cols : nullptr;
                for (std::size_t j = 0; j < w.cols; ++j) {
                    ing[j] += row[j] * gi;
                    if (wtrain) grow[j] += gi * inv[j];
                }
            }
            if (n.vec0 >= 0 && nodes_[n.vec0].trainable) {
                double* bg = vec_grad(nodes_[n.vec0]);
                for (std::size_t i = 0; i < w.rows; ++i) bg[i] += g[i];
            }
            return;
        }
        case Op::TanhVec: {
            Node& in = nodes_[n.in0];
            double* ing = vec_grad(in);
            const double* sig = val_.data() + n.val_ofs;
            const double* g = grd_.data() + n.val_ofs;
            for (std::size_t i = 0; i < n.n; ++i) ing[i] += g[i] * (1.0 - sig[i] * sig[i]);
            return;
        }
        case Op::ReluVec: {
            Node& in = nodes_[n.in0];
            double* ing = vec_grad(in);
            const double* out = val_.data() + n.val_ofs;
            const double* g = grd_.data() + n.val_ofs;
            for (std::size_t i = 0; i < n.n; ++i) {
                if (out[i] > 0.0) ing[i] += g[i];
            }
            return;
        }
        case Op::SliceVec: {
            Node& in = nodes_[n.in0];
            double* ing = vec_grad(in) + n.list_ofs;
            const double* g = grd_.data() + n.val_ofs;
            for (std::size_t i = 0; i < n.n; ++i) ing[i] += g[i];
            return;
        }
        case Op::PickValue: {
            Node& in = nodes_[n.in0];
            grd_[in.val_ofs + n.list_ofs] += grd_[n.val_ofs];
            return;
        }
        case Op::ResidualCdr: {
            Node& in = nodes_[n.in0];
            const double g = grd_[n.val_ofs];
            const double uval = val_[in.val_ofs];
            double* ing = grd_.data() + in.val_ofs;
            ing[0] += g * (-n.c2 * (1.0 - 2.0 * uval));  // d/du of -mu3 u(1-u)
            ing[1] += g * n.c0;                          // dx slot
            ing[2] += g;                                 // dt slot
            ing[3] += -g * n.c1;                         // dxx slot
            return;
        }
        case Op::SubConst:
            grd_[nodes_[n.in0].val_ofs] += grd_[n.val_ofs];
            return;
        case Op::Sub:
            grd_[nodes_[n.in0].val_ofs] += grd_[n.val_ofs];
            grd_[nodes_[n.in1].val_ofs] -= grd_[n.val_ofs];
            return;
        case Op::Add:
            grd_[nodes_[n.in0].val_ofs] += grd_[n.val_ofs];
            grd_[nodes_[n.in1].val_ofs] += grd_[n.val_ofs];
            return;
        case Op::Square:
            grd_[nodes_[n.in0].val_ofs] += 2.0 * val_[nodes_[n.in0].val_ofs] * grd_[n.val_ofs];
            return;
        case Op::Abs: {
            const double x = val_[nodes_[n.in0].val_ofs];
            const double sgn = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
            grd_[nodes_[n.in0].val_ofs] += sgn * grd_[n.val_ofs];
            return;
        }
        case Op::Scale:
            grd_[nodes_[n.in0].val_ofs] += n.c0 * grd_[n.val_ofs];
            return;
        case Op::WeightedSum: {
            const double g = grd_[n.val_ofs];
            for (std::size_t i = 0; i < n.list_len; ++i) {
                grd_[nodes_[list_ids_[n.list_ofs + i]].val_ofs] += list_w_[n.list_ofs + i] * g;
            }
            return;
        }
        case Op::GramOrtho: {
            if (!mats_[n.mat].trainable) return;
            const DenseMatrix& a = *mats_[n.mat].m;
            const std::size_t r = a.cols;
            const double* e = extra_.data() + n.extra_ofs;
            const double g = grd_[n.val_ofs];
            double* ag = mats_[n.mat].grad.data();
            // d/dA ||A^T A - I||_F^2 = 4 A E
            for (std::size_t i = 0; i < a.rows; ++i) {
                const double* row = a.row_ptr(i);
                double* grow = ag + i * r;
                for (std::size_t j = 0; j < r; ++j) {
                    double acc = 0.0;
                    for (std::size_t k = 0; k < r; ++k) acc += row[k] * e[k * r + j];
                    grow[j] += 4.0 * g * acc;
                }
            }
            return;
        }
        case Op::BandedDecay: {
            Node& in = nodes_[n.in0];
            const double* f = val_.data() + in.val_ofs;
            double* ing = vec_grad(in);
            const double g = grd_[n.val_ofs];
            for (std::size_t i = 0; i + 1 < in.n; ++i) {
                if (-f[i] + n.c0 * f[i + 1] > 0.0) {
                    ing[i] -= g;
                    ing[i + 1] += n.c0 * g;
                }
            }
            return;
        }
        case Op::L1ToTarget: {
            Node& in = nodes_[n.in0];
            const double* v = val_.data() + in.val_ofs;
            const double* tgt = extra_.data() + n.extra_ofs;
            double* ing = vec_grad(in);
            const double g = grd_[n.val_ofs];
            for (std::size_t i = 0; i < in.n; ++i) {
                const double d = v[i] - tgt[i];
                ing[i] += g * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
            }
            return;
        }
        case Op::HalfSqNorm: {
            Node& in = nodes_[n.in0];
            const double* v = val_.data() + in.val_ofs;
            double* ing = vec_grad(in);
            const double g = grd_[n.val_ofs];
            for (std::size_t i = 0; i < in.n; ++i) ing[i] += g * v[i];
            return;
        }
        case Op::DotConst: {
            Node& in = nodes_[n.in0];
            const double* c = extra_.data() + n.extra_ofs;
            double* ing = vec_grad(in);
            const double g = grd_[n.val_ofs];
            for (std::size_t i = 0; i < in.n; ++i) ing[i] += g * c[i];
            return;
        }
    }
}

// ---- emitters ----

BoundLrnr bind_lrnr(Tape& tape, const LrnrParams& params, bool trainable) {
    BoundLrnr b;
    b.params = &params;
    for (std::size_t l = 0; l < params.depth(); ++l) {
        b.u_slots.push_back(tape.bind_matrix(params.u[l], trainable));
        b.v_slots.push_back(tape.bind_matrix(params.v[l], trainable));
        b.b_leaves.push_back(
            tape.leaf_vector(params.b[l].data.data(), params.b[l].len(), trainable));
    }
    return b;
}

BoundCoeffs bind_coeffs(Tape& tape, const Coefficients& s, bool trainable) {
    BoundCoeffs b;
    for (const auto& sl : s.s) b.s_leaves.push_back(tape.leaf_vector(sl.data.data(), sl.len(), trainable));
    return b;
}

BoundHyper bind_hyper(Tape& tape, const HyperParams& theta, bool trainable) {
    BoundHyper b;
    b.theta = &theta;
    for (std::size_t k = 0; k < theta.w.size(); ++k) {
        b.w_slots.push_back(tape.bind_matrix(theta.w[k], trainable));
        b.b_leaves.push_back(
            tape.leaf_vector(theta.b[k].data.data(), theta.b[k].len(), trainable));
    }
    return b;
}

BoundFast bind_fast(Tape& tape, const FastParams& fast) {
    BoundFast b;
    b.fast = &fast;
    b.v_in = tape.bind_matrix(fast.v_in, false);
    b.u_out = tape.bind_matrix(fast.u_out, false);
    for (std::size_t l = 0; l + 1 < fast.depth(); ++l) {
        b.u_hat.push_back(tape.bind_matrix(fast.u_hat[l], false));
        b.v_hat.push_back(tape.bind_matrix(fast.v_hat[l], false));
        b.b_hat.push_back(
            tape.leaf_vector(fast.b_hat[l].data.data(), fast.b_hat[l].len(), false));
    }
    b.b_out = tape.leaf_vector(fast.b_out.data.data(), fast.b_out.len(), false);
    return b;
}

NodeId emit_lrnr_jet(Tape& tape, double x, double t, const BoundLrnr& net,
                     const std::vector<NodeId>& s_nodes) {
    const std::size_t depth_l = net.params->depth();
    require(s_nodes.size() == depth_l, "emit_lrnr_jet: coefficient node count mismatch");
    NodeId z = tape.leaf_jet_input(x, t);
    for (std::size_t l = 0; l < depth_l; ++l) {
        z = tape.affine_factored(net.u_slots[l], s_nodes[l], net.v_slots[l], net.b_leaves[l], z,
                                 static_cast<int>(l + 1));
        if (l + 1 < depth_l) z = tape.activation_jet(z, static_cast<int>(l + 1));
    }
    return z;
}

std::vector<NodeId> emit_hyper(Tape& tape, const PdeParams& mu, const BoundHyper& net) {
    const HyperParams& theta = *net.theta;
    DenseVector norm = normalize_mu(mu, theta.box);
    NodeId z = tape.leaf_vector(norm.data.data(), norm.len(), false);
    const std::size_t n_layers = theta.w.size();
    for (std::size_t k = 0; k < n_layers; ++k) {
        z = tape.affine_dense_vec(net.w_slots[k], net.b_leaves[k], z, 100 + static_cast<int>(k));
        if (k + 1 < n_layers) {
            z = tape.tanh_vec(z, 100 + static_cast<int>(k));
        } else {
            z = tape.relu_vec(z, 100 + static_cast<int>(k));
        }
    }
    std::vector<NodeId> out;
    std::size_t ofs = 0;
    for (std::size_t r : theta.split) {
        out.push_back(tape.slice_vec(z, ofs, r));
        ofs += r;
    }
    return out;
}

NodeId emit_fast_jet(Tape& tape, double x, double t, const BoundFast& net,
                     const std::vector<NodeId>& s_nodes) {
    const FastParams& fast = *net.fast;
    const std::size_t depth_l = fast.depth();
    require(s_nodes.size() == depth_l, "emit_fast_jet: coefficient node count mismatch");
    NodeId in = tape.leaf_jet_input(x, t);
    NodeId z = tape.affine_dense_jet(net.v_in, true, -1, in, 0);
    for (std::size_t l = 0; l + 1 < depth_l; ++l) {
        const int tag = static_cast<int>(l + 1);
        NodeId scaled = tape.scale_jet(s_nodes[l], z, tag);
        NodeId pre = tape.affine_dense_jet(net.u_hat[l], false, net.b_hat[l], scaled, tag);
        NodeId act = tape.activation_jet(pre, tag);
        z = tape.affine_dense_jet(net.v_hat[l], true, -1, act, tag);
    }
    NodeId scaled = tape.scale_jet(s_nodes[depth_l - 1], z, static_cast<int>(depth_l));
    return tape.affine_dense_jet(net.u_out, false, net.b_out, scaled,
                                 static_cast<int>(depth_l));
}

// ---- packer / grad front-end ----

ParamPacker::ParamPacker(const Trainables& at, ParamSelector select) {
    if (select == ParamSelector::BasesBiasesAndHyper) {
        if (at.lrnr) {
            for (std::size_t l = 0; l < at.lrnr->depth(); ++l) {
                segs_.push_back({at.lrnr->u[l].data.data(), at.lrnr->u[l].data.size(), false});
                segs_.push_back({at.lrnr->v[l].data.data(), at.lrnr->v[l].data.size(), false});
                segs_.push_back({at.lrnr->b[l].data.data(), at.lrnr->b[l].data.size(), false});
            }
        }
        if (at.hyper) {
            for (std::size_t k = 0; k < at.hyper->w.size(); ++k) {
                segs_.push_back({at.hyper->w[k].data.data(), at.hyper->w[k].data.size(), false});
                segs_.push_back({at.hyper->b[k].data.data(), at.hyper->b[k].data.size(), false});
            }
        }
    } else {
        require(at.coeffs != nullptr, "ParamPacker: CoefficientsOnly needs coefficients");
        for (auto& sl : at.coeffs->s) segs_.push_back({sl.data.data(), sl.data.size(), true});
    }
    for (const auto& s : segs_) total_ += s.len;
}

std::vector<double> ParamPacker::pack() const {
    std::vector<double> x(total_);
    std::size_t ofs = 0;
    for (const auto& s : segs_) {
        for (std::size_t i = 0; i < s.len; ++i) x[ofs + i] = s.ptr[i];
        ofs += s.len;
    }
    return x;
}

void ParamPacker::unpack(const std::vector<double>& x) const {
    require(x.size() == total_, "ParamPacker::unpack: size mismatch");
    std::size_t ofs = 0;
    for (const auto& s : segs_) {
        for (std::size_t i = 0; i < s.len; ++i) s.ptr[i] = x[ofs + i];
        ofs += s.len;
    }
}

void ParamPacker::project_nonnegative_coeffs(std::vector<double>& x) const {
    std::size_t ofs = 0;
    for (const auto& s : segs_) {
        if (s.is_coeff) {
            for (std::size_t i = 0; i < s.len; ++i) {
                if (x[ofs + i] < 0.0) x[ofs + i] = 0.0;
            }
        }
        ofs += s.len;
    }
}

TapeBindings make_bindings(Tape& tape, const Trainables& at, ParamSelector select) {
    TapeBindings ctx{tape, at, select, {}, {}, {}};
    const bool bases_trainable = select == ParamSelector::BasesBiasesAndHyper;
    if (at.lrnr) ctx.lrnr = bind_lrnr(tape, *at.lrnr, bases_trainable);
    if (at.hyper) ctx.hyper = bind_hyper(tape, *at.hyper, bases_trainable);
    if (at.coeffs) ctx.coeffs = bind_coeffs(tape, *at.coeffs, !bases_trainable);
    return ctx;
}

std::vector<double> collect_grads(const Tape& tape, const TapeBindings& ctx) {
    std::vector<double> g;
    auto append_mat = [&](int slot) {
        const auto& mg = tape.matrix_grad(slot);
        g.insert(g.end(), mg.begin(), mg.end());
    };
    auto append_leaf = [&](NodeId leaf, std::size_t n) {
        const double* lg = tape.leaf_grad(leaf);
        g.insert(g.end(), lg, lg + n);
    };
    if (ctx.select == ParamSelector::BasesBiasesAndHyper) {
        if (ctx.at.lrnr) {
            for (std::size_t l = 0; l < ctx.at.lrnr->depth(); ++l) {
                append_mat(ctx.lrnr.u_slots[l]);
                append_mat(ctx.lrnr.v_slots[l]);
                append_leaf(ctx.lrnr.b_leaves[l], ctx.at.lrnr->b[l].len());
            }
        }
        if (ctx.at.hyper) {
            for (std::size_t k = 0; k < ctx.at.hyper->w.size(); ++k) {
                append_mat(ctx.hyper.w_slots[k]);
                append_leaf(ctx.hyper.b_leaves[k], ctx.at.hyper->b[k].len());
            }
        }
    } else {
        for (std::size_t l = 0; l < ctx.coeffs.s_leaves.size(); ++l) {
            append_leaf(ctx.coeffs.s_leaves[l], ctx.at.coeffs->s[l].len());
        }
    }
    return g;
}

GradResult grad(const LossBuilder& builder, const Trainables& at, ParamSelector select) {
    Tape tape;
    TapeBindings ctx = make_bindings(tape, at, select);
    tape.set_watermark();
    const NodeId root = builder(ctx);
    tape.check_finite(root);
    tape.backward(root, 1.0);
    GradResult out;
    out.value = tape.value(root);
    out.grad = collect_grads(tape, ctx);
    return out;
}

double eval_loss(const LossBuilder& builder, const Trainables& at, ParamSelector select) {
    Tape tape;
    TapeBindings ctx = make_bindings(tape, at, select);
    tape.set_watermark();
    const NodeId root = builder(ctx);
    return tape.value(root);
}

std::vector<double> finite_diff_gradient(const LossBuilder& builder, const Trainables& at,
                                         ParamSelector select, double step) {
    require(step > 0.0, "finite_diff_gradient: step must be positive");
    ParamPacker packer(at, select);
    std::vector<double> x = packer.pack();
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + step;
        packer.unpack(x);
        const double fp = eval_loss(builder, at, select);
        x[i] = saved - step;
        packer.unpack(x);
        const double fm = eval_loss(builder, at, select);
        x[i] = saved;
        g[i] = (fp - fm) / (2.0 * step);
    }
    packer.unpack(x);
    return g;
}

void adam_step(AdamState& state, std::vector<double>& params, const std::vector<double>& grads) {
    require(params.size() == grads.size() && params.size() == state.m.size(),
            "adam_step: shape mismatch");
    state.t += 1;
    const double b1t = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double b2t = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / b1t;
        const double vhat = state.v[i] / b2t;
        params[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
}

}  // namespace lrnr
