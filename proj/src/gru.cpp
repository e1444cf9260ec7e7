#include <cmath>

#include "model_internal.hpp"

namespace gcn::detail {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void append(std::vector<double>& v, const double* x, int n) { v.insert(v.end(), x, x + n); }

void draw_mask(Rng& rng, double rate, int n, std::vector<double>& out) {
    for (int i = 0; i < n; ++i)
        out.push_back(rng.next_unit() >= rate ? 1.0 / (1.0 - rate) : 0.0);
}

}  // namespace

GruRun gru_run(const LMConfig& cfg, bool store) {
    GruRun run;
    run.store = store;
    const auto L = static_cast<std::size_t>(cfg.num_layers);
    run.h.assign(L, std::vector<double>(static_cast<std::size_t>(cfg.hidden_dim), 0.0));
    if (store) {
        run.in.resize(L);
        run.hprev.resize(L);
        run.z.resize(L);
        run.r.resize(L);
        run.hh.resize(L);
        run.g.resize(L);
        if (L > 1) run.dmask.resize(L - 1);
    }
    return run;
}

std::vector<double> gru_step(const LMConfig& cfg, const std::vector<double>& params, GruRun& run,
                             int id, Rng* dropout_rng) {
    const int E = cfg.embed_dim, H = cfg.hidden_dim, V = cfg.vocab_size;
    if (id < 0 || id >= V) throw DataError("token id out of range: " + std::to_string(id));
    if (run.len >= cfg.max_seq_len)
        throw DataError("sequence exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    const auto lay = GruLayout::make(cfg);
    const double* P = params.data();
    const bool drop = dropout_rng != nullptr && cfg.dropout > 0.0 && cfg.num_layers > 1;

    std::vector<double> input(P + lay.tok.off + static_cast<std::size_t>(id) * E,
                              P + lay.tok.off + static_cast<std::size_t>(id) * E + E);
    std::vector<double> zpre(H), rpre(H), g(H), hhpre(H), hh(H), z(H), r(H);
    for (int l = 0; l < cfg.num_layers; ++l) {
        const GruLayer& ly = lay.layers[static_cast<std::size_t>(l)];
        const int in_dim = l == 0 ? E : H;
        std::vector<double>& h = run.h[static_cast<std::size_t>(l)];
        if (run.store) {
            append(run.in[l], input.data(), in_dim);
            append(run.hprev[l], h.data(), H);
        }

        matvec(P + ly.wz.off, in_dim, H, input.data(), zpre.data());
        matvec_acc(P + ly.uz.off, H, H, h.data(), zpre.data());
        matvec(P + ly.wr.off, in_dim, H, input.data(), rpre.data());
        matvec_acc(P + ly.ur.off, H, H, h.data(), rpre.data());
        for (int i = 0; i < H; ++i) {
            z[i] = sigmoid(zpre[i] + P[ly.bz.off + i]);
            r[i] = sigmoid(rpre[i] + P[ly.br.off + i]);
        }
        matvec(P + ly.uh.off, H, H, h.data(), g.data());
        matvec(P + ly.wh.off, in_dim, H, input.data(), hhpre.data());
        for (int i = 0; i < H; ++i) hhpre[i] += r[i] * g[i] + P[ly.bh.off + i];
        for (int i = 0; i < H; ++i) hh[i] = std::tanh(hhpre[i]);
        for (int i = 0; i < H; ++i) h[i] = (1.0 - z[i]) * hh[i] + z[i] * h[i];
        if (run.store) {
            append(run.z[l], z.data(), H);
            append(run.r[l], r.data(), H);
            append(run.hh[l], hh.data(), H);
            append(run.g[l], g.data(), H);
        }

        input.assign(h.begin(), h.end());
        if (l + 1 < cfg.num_layers && drop) {
            std::size_t base = run.dmask[l].size();
            draw_mask(*dropout_rng, cfg.dropout, H, run.dmask[l]);
            for (int i = 0; i < H; ++i) input[static_cast<std::size_t>(i)] *= run.dmask[l][base + i];
        }
    }

    std::vector<double> logits(V);
    matvec(P + lay.w_out.off, H, V, run.h.back().data(), logits.data());
    for (int i = 0; i < V; ++i) logits[i] += P[lay.b_out.off + i];

    run.ids.push_back(id);
    ++run.len;
    return logits;
}

void gru_backward(const LMConfig& cfg, const std::vector<double>& params, const GruRun& run,
                  const std::vector<double>& dlogits, std::vector<double>& grad) {
    const int E = cfg.embed_dim, H = cfg.hidden_dim, V = cfg.vocab_size;
    const int T = run.len;
    const int L = cfg.num_layers;
    const auto lay = GruLayout::make(cfg);
    const double* P = params.data();
    double* G = grad.data();
    const bool drop = !run.dmask.empty() && !run.dmask[0].empty();

    // dh[l][t]: gradient flowing into h_t of layer l from outside the layer
    // (head for the top layer, next layer's input elsewhere).
    std::vector<std::vector<double>> dh(
        static_cast<std::size_t>(L),
        std::vector<double>(static_cast<std::size_t>(T) * H, 0.0));

    // Head backward: logits_t = h[L-1][t] @ Wout + bout. The stored inputs of
    // a hypothetical layer L are the top hidden states; recover from run.h
    // history — the per-step top hidden state is hprev of no one, so rebuild
    // from the cell outputs: h_t = (1-z)*hh + z*hprev.
    std::vector<double> htop(H);
    for (int t = 0; t < T; ++t) {
        const std::size_t o = static_cast<std::size_t>(t) * H;
        const int top = L - 1;
        for (int i = 0; i < H; ++i) {
            const double zz = run.z[top][o + i];
            htop[i] = (1.0 - zz) * run.hh[top][o + i] + zz * run.hprev[top][o + i];
        }
        const double* dl = dlogits.data() + static_cast<std::size_t>(t) * V;
        outer_acc(G + lay.w_out.off, H, V, htop.data(), dl);
        for (int i = 0; i < V; ++i) G[lay.b_out.off + i] += dl[i];
        matvec_t_acc(P + lay.w_out.off, H, V, dl,
                     dh[static_cast<std::size_t>(L - 1)].data() + o);
    }

    std::vector<double> dht(H), dzpre(H), drpre(H), dhhpre(H), dg(H), din;
    for (int l = L - 1; l >= 0; --l) {
        const GruLayer& ly = lay.layers[static_cast<std::size_t>(l)];
        const int in_dim = l == 0 ? E : H;
        std::vector<double> dhrun(H, 0.0);
        din.assign(static_cast<std::size_t>(in_dim), 0.0);
        for (int t = T - 1; t >= 0; --t) {
            const std::size_t o = static_cast<std::size_t>(t) * H;
            const double* zt = run.z[l].data() + o;
            const double* rt = run.r[l].data() + o;
            const double* hht = run.hh[l].data() + o;
            const double* gt = run.g[l].data() + o;
            const double* hprev = run.hprev[l].data() + o;
            const double* in =
                run.in[l].data() + static_cast<std::size_t>(t) * in_dim;

            for (int i = 0; i < H; ++i)
                dht[i] = dh[static_cast<std::size_t>(l)][o + i] + dhrun[i];

            // h = (1-z)*hh + z*hprev
            std::fill(dhrun.begin(), dhrun.end(), 0.0);
            for (int i = 0; i < H; ++i) {
                const double dz = dht[i] * (hprev[i] - hht[i]);
                dzpre[i] = dz * zt[i] * (1.0 - zt[i]);
                const double dhh = dht[i] * (1.0 - zt[i]);
                dhhpre[i] = dhh * (1.0 - hht[i] * hht[i]);
                dhrun[i] += dht[i] * zt[i];
            }
            // hh = tanh(in@Wh + r*(hprev@Uh) + bh)
            for (int i = 0; i < H; ++i) {
                const double dr = dhhpre[i] * gt[i];
                drpre[i] = dr * rt[i] * (1.0 - rt[i]);
                dg[i] = dhhpre[i] * rt[i];
            }
            std::fill(din.begin(), din.end(), 0.0);
            outer_acc(G + ly.wh.off, in_dim, H, in, dhhpre.data());
            for (int i = 0; i < H; ++i) G[ly.bh.off + i] += dhhpre[i];
            matvec_t_acc(P + ly.wh.off, in_dim, H, dhhpre.data(), din.data());
            outer_acc(G + ly.uh.off, H, H, hprev, dg.data());
            matvec_t_acc(P + ly.uh.off, H, H, dg.data(), dhrun.data());

            outer_acc(G + ly.wz.off, in_dim, H, in, dzpre.data());
            for (int i = 0; i < H; ++i) G[ly.bz.off + i] += dzpre[i];
            matvec_t_acc(P + ly.wz.off, in_dim, H, dzpre.data(), din.data());
            outer_acc(G + ly.uz.off, H, H, hprev, dzpre.data());
            matvec_t_acc(P + ly.uz.off, H, H, dzpre.data(), dhrun.data());

            outer_acc(G + ly.wr.off, in_dim, H, in, drpre.data());
            for (int i = 0; i < H; ++i) G[ly.br.off + i] += drpre[i];
            matvec_t_acc(P + ly.wr.off, in_dim, H, drpre.data(), din.data());
            outer_acc(G + ly.ur.off, H, H, hprev, drpre.data());
            matvec_t_acc(P + ly.ur.off, H, H, drpre.data(), dhrun.data());

            if (l == 0) {
                const int id = run.ids[static_cast<std::size_t>(t)];
                double* gtok = G + lay.tok.off + static_cast<std::size_t>(id) * E;
                for (int i = 0; i < E; ++i) gtok[i] += din[static_cast<std::size_t>(i)];
            } else {
                // din is w.r.t. the post-dropout input; the mask folds in here.
                double* below = dh[static_cast<std::size_t>(l - 1)].data() + o;
                for (int i = 0; i < H; ++i) {
                    const double m = drop ? run.dmask[l - 1][o + i] : 1.0;
                    below[i] += din[static_cast<std::size_t>(i)] * m;
                }
            }
        }
    }
}

GruLayout GruLayout::make(const LMConfig& cfg) {
    GruLayout lay;
    std::size_t off = 0;
    auto add = [&off](int rows, int cols) {
        Tensor t{off, rows, cols};
        off += t.size();
        return t;
    };
    const int E = cfg.embed_dim, H = cfg.hidden_dim, V = cfg.vocab_size;
    lay.tok = add(V, E);
    for (int l = 0; l < cfg.num_layers; ++l) {
        const int in_dim = l == 0 ? E : H;
        GruLayer ly;
        ly.wz = add(in_dim, H);
        ly.uz = add(H, H);
        ly.bz = add(H, 1);
        ly.wr = add(in_dim, H);
        ly.ur = add(H, H);
        ly.br = add(H, 1);
        ly.wh = add(in_dim, H);
        ly.uh = add(H, H);
        ly.bh = add(H, 1);
        lay.layers.push_back(ly);
    }
    lay.w_out = add(H, V);
    lay.b_out = add(V, 1);
    lay.total = off;
    return lay;
}

}  // namespace gcn::detail
