#ifndef LRNR_AUTODIFF_HPP
#define LRNR_AUTODIFF_HPP

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "lrnr/model.hpp"
#include "lrnr/pde_params.hpp"

// Reverse-mode parameter gradients through the jet-forward computation. The
// tape records layer-granular ops (factored affine, activation jet, dense
// affine, plus the scalar glue that losses are assembled from); each op has a
// hand-written vector-Jacobian product. Forward jets carry the input
// derivatives, so a single reverse sweep yields exact parameter gradients of
// residual-based losses.

namespace lrnr {

enum class ParamSelector { CoefficientsOnly, BasesBiasesAndHyper };

using NodeId = std::int32_t;

// Raised when a recorded value goes non-finite; layer_tag identifies the
// offending layer when known (-1 otherwise).
struct NonFiniteError : std::runtime_error {
    int layer_tag;
    explicit NonFiniteError(int tag)
        : std::runtime_error("non-finite value in recorded computation, layer tag " +
                             std::to_string(tag)),
          layer_tag(tag) {}
};

class Tape {
public:
    Tape() { reserve(1 << 12); }

    void reserve(std::size_t doubles);

    // ---- leaves (bind before set_watermark so they survive resets) ----
    int bind_matrix(const DenseMatrix& m, bool trainable);
    NodeId leaf_vector(const double* data, std::size_t n, bool trainable);
    NodeId leaf_jet_input(double x, double t);

    // ---- jet chain ----
    NodeId affine_factored(int u_slot, NodeId s_vec, int v_slot, NodeId b_vec, NodeId in_jet,
                           int tag);
    NodeId affine_dense_jet(int a_slot, bool trans, NodeId b_vec, NodeId in_jet, int tag);
    NodeId scale_jet(NodeId s_vec, NodeId in_jet, int tag);
    NodeId activation_jet(NodeId in_jet, int tag);

    // ---- plain vector chain (hypernetwork) ----
    NodeId affine_dense_vec(int w_slot, NodeId b_vec, NodeId in_vec, int tag);
    NodeId tanh_vec(NodeId in, int tag);
    NodeId relu_vec(NodeId in, int tag);
    NodeId slice_vec(NodeId in, std::size_t offset, std::size_t len);

    // ---- scalars ----
    NodeId pick_value(NodeId jet, std::size_t idx);
    NodeId residual_cdr(NodeId jet, const PdeParams& mu);
    NodeId sub_const(NodeId a, double c);
    NodeId sub(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId square(NodeId a);
    NodeId abs_val(NodeId a);
    NodeId scale(NodeId a, double w);
    NodeId weighted_sum(const std::vector<NodeId>& ids, const std::vector<double>& weights);
    NodeId gram_ortho_penalty(int mat_slot);
    NodeId banded_decay_penalty(NodeId vec, double gamma);
    NodeId l1_to_target(NodeId vec, const double* target, std::size_t n);
    NodeId half_sq_norm(NodeId vec);
    NodeId dot_const(NodeId vec, const double* c, std::size_t n);

    // ---- execution ----
    double value(NodeId id) const;
    const double* vector_value(NodeId id) const;
    std::size_t node_len(NodeId id) const;
    void backward(NodeId root, double seed = 1.0);
    const double* leaf_grad(NodeId leaf) const;
    const std::vector<double>& matrix_grad(int slot) const;
    void clear_param_grads();

    // Truncation point between persistent leaves and per-point transients.
    void set_watermark();
    void reset_to_watermark();

    // Diagnostics / structural assertions.
    std::size_t max_node_len() const { return max_node_len_; }
    std::size_t max_matrix_elems() const { return max_matrix_elems_; }
    void check_finite(NodeId root) const;  // throws NonFiniteError

private:
    enum class Op : std::uint8_t {
        LeafVec,
        LeafJet,
        AffineFactoredJet,
        AffineDenseJet,
        ScaleJet,
        ActivationJet,
        AffineDenseVec,
        TanhVec,
        ReluVec,
        SliceVec,
        PickValue,
        ResidualCdr,
        SubConst,
        Sub,
        Add,
        Square,
        Abs,
        Scale,
        WeightedSum,
        GramOrtho,
        BandedDecay,
        L1ToTarget,
        HalfSqNorm,
        DotConst,
    };

    struct Node {
        Op op;
        bool trans = false;
        bool trainable = false;  // leaves only
        int tag = -1;
        NodeId in0 = -1;
        NodeId in1 = -1;
        NodeId vec0 = -1;  // s / b auxiliary vector nodes
        NodeId vec1 = -1;
        int mat = -1;   // primary matrix slot
        int mat2 = -1;  // secondary matrix slot (V in factored affine)
        std::size_t n = 0;        // per-slot length (jets) or vector length or 1
        std::size_t val_ofs = 0;  // into val_/grd_ (jets occupy 4n doubles)
        std::size_t extra_ofs = 0;
        std::size_t extra_len = 0;
        std::size_t list_ofs = 0;
        std::size_t list_len = 0;
        double c0 = 0.0, c1 = 0.0, c2 = 0.0;
    };

    struct MatSlot {
        const DenseMatrix* m;
        bool trainable;
        std::vector<double> grad;
    };

    std::size_t alloc(std::size_t len);
    std::size_t alloc_extra(std::size_t len);
    NodeId push(Node n);
    kernels::JetView jet_view(Node& n);
    kernels::ConstJetView jet_cview(const Node& n) const;
    kernels::JetView jet_grad_view(Node& n);
    double* vec_grad(Node& n) { return grd_.data() + n.val_ofs; }
    void backward_node(Node& n);

    std::vector<Node> nodes_;
    std::vector<double> val_;
    std::vector<double> grd_;
    std::vector<double> extra_;
    std::vector<NodeId> list_ids_;
    std::vector<double> list_w_;
    std::vector<MatSlot> mats_;
    std::unordered_map<const DenseMatrix*, int> mat_cache_;
    std::vector<double> scratch_;

    std::size_t wm_nodes_ = 0, wm_val_ = 0, wm_extra_ = 0, wm_list_ = 0;
    std::size_t max_node_len_ = 0;
    std::size_t max_matrix_elems_ = 0;
};

// ---- model-structure emitters ----

struct BoundLrnr {
    const LrnrParams* params = nullptr;
    std::vector<int> u_slots, v_slots;
    std::vector<NodeId> b_leaves;
};

struct BoundCoeffs {
    std::vector<NodeId> s_leaves;
};

struct BoundHyper {
    const HyperParams* theta = nullptr;
    std::vector<int> w_slots;
    std::vector<NodeId> b_leaves;
};

struct BoundFast {
    const FastParams* fast = nullptr;
    int v_in = -1, u_out = -1;
    std::vector<int> u_hat, v_hat;
    std::vector<NodeId> b_hat;
    NodeId b_out = -1;
};

BoundLrnr bind_lrnr(Tape& tape, const LrnrParams& params, bool trainable);
BoundCoeffs bind_coeffs(Tape& tape, const Coefficients& s, bool trainable);
BoundHyper bind_hyper(Tape& tape, const HyperParams& theta, bool trainable);
BoundFast bind_fast(Tape& tape, const FastParams& fast);

// Output-layer jet of the LRNR at (x, t) with per-layer coefficient nodes.
NodeId emit_lrnr_jet(Tape& tape, double x, double t, const BoundLrnr& net,
                     const std::vector<NodeId>& s_nodes);

// Hypernetwork chain at mu; returns per-layer coefficient vector nodes.
std::vector<NodeId> emit_hyper(Tape& tape, const PdeParams& mu, const BoundHyper& net);

// Output-layer jet of the FastLRNR (the SPInProp evaluation path).
NodeId emit_fast_jet(Tape& tape, double x, double t, const BoundFast& net,
                     const std::vector<NodeId>& s_nodes);

// ---- gradient front-end ----

struct Trainables {
    LrnrParams* lrnr = nullptr;
    HyperParams* hyper = nullptr;
    Coefficients* coeffs = nullptr;
};

// Flat view of the selected trainables, in a fixed order (per layer: U, V, b;
// then hypernetwork W, b per layer; then coefficient vectors).
class ParamPacker {
public:
    ParamPacker(const Trainables& at, ParamSelector select);
    std::size_t size() const { return total_; }
    std::vector<double> pack() const;
    void unpack(const std::vector<double>& x) const;
    // Clamps coefficient segments to [0, inf); other segments untouched.
    void project_nonnegative_coeffs(std::vector<double>& x) const;

private:
    struct Segment {
        double* ptr;
        std::size_t len;
        bool is_coeff;
    };
    std::vector<Segment> segs_;
    std::size_t total_ = 0;
};

// Loss builders receive an already-bound view of the trainables.
struct TapeBindings {
    Tape& tape;
    Trainables at;
    ParamSelector select;
    BoundLrnr lrnr;
    BoundHyper hyper;
    BoundCoeffs coeffs;
};

using LossBuilder = std::function<NodeId(TapeBindings&)>;

struct GradResult {
    double value = 0.0;
    std::vector<double> grad;
};

// Exact reverse-mode gradient of the builder's scalar w.r.t. the selected
// parameters, flattened in ParamPacker order.
GradResult grad(const LossBuilder& builder, const Trainables& at, ParamSelector select);

double eval_loss(const LossBuilder& builder, const Trainables& at, ParamSelector select);

// Central-difference estimate per selected scalar parameter.
std::vector<double> finite_diff_gradient(const LossBuilder& builder, const Trainables& at,
                                         ParamSelector select, double step);

// Collects the selected-leaf gradients of a tape already run backward, in
// ParamPacker order. Exposed for the chunked training path.
std::vector<double> collect_grads(const Tape& tape, const TapeBindings& ctx);

// Binds the selected trainables on a fresh tape (leaves only; no ops).
TapeBindings make_bindings(Tape& tape, const Trainables& at, ParamSelector select);

// ---- Adam ----

struct AdamState {
    std::size_t t = 0;
    std::vector<double> m, v;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState make(std::size_t n, double lr) {
        AdamState s;
        s.m.assign(n, 0.0);
        s.v.assign(n, 0.0);
        s.lr = lr;
        return s;
    }
};

// Standard bias-corrected Adam update, in place.
void adam_step(AdamState& state, std::vector<double>& params, const std::vector<double>& grads);

}  // namespace lrnr

#endif
