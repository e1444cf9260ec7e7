#pragma once

// Shared internals for the two model architectures. Both expose the same
// shape: a Run that is advanced one position at a time, returning next-token
// logits, plus a full-sequence backward over the stored trace. Training,
// scoring, and decoding all go through the same step function so their
// floating-point results are identical.

#include <cstddef>
#include <span>
#include <vector>

#include "gcn/common.hpp"
#include "gcn/model.hpp"

namespace gcn::detail {

struct Tensor {
    std::size_t off = 0;
    int rows = 0;
    int cols = 1;
    std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

// y[cols] = x[rows] @ W[rows x cols]
void matvec(const double* w, int rows, int cols, const double* x, double* y);
// y[cols] += x[rows] @ W[rows x cols]
void matvec_acc(const double* w, int rows, int cols, const double* x, double* y);
// x[rows] += W[rows x cols] @ y[cols]
void matvec_t_acc(const double* w, int rows, int cols, const double* y, double* x);
// gW[i,j] += x[i] * y[j]
void outer_acc(double* gw, int rows, int cols, const double* x, const double* y);

double log_sum_exp(std::span<const double> v);

struct TfLayer {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor w1, b1, w2, b2;
};

struct TfLayout {
    Tensor tok, pos;
    std::vector<TfLayer> layers;
    Tensor lnf_g, lnf_b;
    Tensor w_out, b_out;
    std::size_t total = 0;

    static TfLayout make(const LMConfig& cfg);
};

struct GruLayer {
    Tensor wz, uz, bz;
    Tensor wr, ur, br;
    Tensor wh, uh, bh;
};

struct GruLayout {
    Tensor tok;
    std::vector<GruLayer> layers;
    Tensor w_out, b_out;
    std::size_t total = 0;

    static GruLayout make(const LMConfig& cfg);
};

std::size_t param_count(const LMConfig& cfg);

///// Fills params in layout order: embeddings N(0, 0.1), output head N(0, 0.02),
/// internal matrices N(0, 1/sqrt(fan_in)), biases 0, layer-norm gains 1.
void init_params(const LMConfig& cfg, std::vector<double>& params, Rng& rng);

// --- self_attention --------------------------------------------------------

struct TfRun {
    bool store = false;  // keep the activations backward needs
    int len = 0;
    std::vector<int> ids;
    // keys/values per layer, [len x E]; needed for decoding and backward
    std::vector<std::vector<double>> k, v;
    // training extras, per layer [len x E] unless noted
    std::vector<std::vector<double>> x;       // [L+1] layer inputs + final stream
    std::vector<std::vector<double>> xu, u;   // pre-attention norm (raw, scaled)
    std::vector<std::vector<double>> q;
    std::vector<std::vector<double>> alpha;   // flattened lower triangle rows
    std::vector<std::vector<double>> c, a, au, w;
    std::vector<std::vector<double>> hpre;    // [L][len x H]
    std::vector<std::vector<double>> rstd1, rstd2;  // [L][len]
    std::vector<double> yu, rstd3;            // [len x E], [len]
    std::vector<double> d0;                   // dropout masks, [len x E]
    std::vector<std::vector<double>> d1, d2;  // [L][len x E]
};

TfRun tf_run(const LMConfig& cfg, bool store);
std::vector<double> tf_step(const LMConfig& cfg, const std::vector<double>& params, TfRun& run,
                            int id, Rng* dropout_rng);
void tf_backward(const LMConfig& cfg, const std::vector<double>& params, const TfRun& run,
                 const std::vector<double>& dlogits, std::vector<double>& grad);

// --- recurrent -------------------------------------------------------------

struct GruRun {
    bool store = false;
    int len = 0;
    std::vector<int> ids;
    std::vector<std::vector<double>> h;  // current hidden per layer [H]
    // training extras, per layer [len x dim]
    std::vector<std::vector<double>> in;      // post-dropout layer inputs
    std::vector<std::vector<double>> hprev, z, r, hh, g;  // g = hprev @ Uh
    std::vector<std::vector<double>> dmask;   // inter-layer dropout, [L-1][len x H]
};

GruRun gru_run(const LMConfig& cfg, bool store);
std::vector<double> gru_step(const LMConfig& cfg, const std::vector<double>& params, GruRun& run,
                             int id, Rng* dropout_rng);
void gru_backward(const LMConfig& cfg, const std::vector<double>& params, const GruRun& run,
                  const std::vector<double>& dlogits, std::vector<double>& grad);

}  // namespace gcn::detail
