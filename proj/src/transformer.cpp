#include <cmath>
#include <cstring>

#include "model_internal.hpp"

namespace gcn::detail {

void matvec(const double* w, int rows, int cols, const double* x, double* y) {
    std::memset(y, 0, sizeof(double) * static_cast<std::size_t>(cols));
    for (int i = 0; i < rows; ++i) {
        const double xi = x[i];
        const double* row = w + static_cast<std::size_t>(i) * cols;
        for (int j = 0; j < cols; ++j) y[j] += xi * row[j];
    }
}

void matvec_acc(const double* w, int rows, int cols, const double* x, double* y) {
    for (int i = 0; i < rows; ++i) {
        const double xi = x[i];
        const double* row = w + static_cast<std::size_t>(i) * cols;
        for (int j = 0; j < cols; ++j) y[j] += xi * row[j];
    }
}

void matvec_t_acc(const double* w, int rows, int cols, const double* y, double* x) {
    for (int i = 0; i < rows; ++i) {
        const double* row = w + static_cast<std::size_t>(i) * cols;
        double acc = 0.0;
        for (int j = 0; j < cols; ++j) acc += row[j] * y[j];
        x[i] += acc;
    }
}

void outer_acc(double* gw, int rows, int cols, const double* x, const double* y) {
    for (int i = 0; i < rows; ++i) {
        const double xi = x[i];
        double* row = gw + static_cast<std::size_t>(i) * cols;
        for (int j = 0; j < cols; ++j) row[j] += xi * y[j];
    }
}

double log_sum_exp(std::span<const double> v) {
    double m = v[0];
    for (double x : v) m = std::max(m, x);
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

namespace {

constexpr double kLnEps = 1e-5;

// Normalizes x into nhat, returns rstd.
double layer_norm(const double* x, int n, double* nhat) {
    double mu = 0.0;
    for (int i = 0; i < n; ++i) mu += x[i];
    mu /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) var += (x[i] - mu) * (x[i] - mu);
    var /= n;
    double rstd = 1.0 / std::sqrt(var + kLnEps);
    for (int i = 0; i < n; ++i) nhat[i] = (x[i] - mu) * rstd;
    return rstd;
}

// Given d(loss)/d(nhat), adds d(loss)/d(x) into dx.
void layer_norm_backward(const double* dnhat, const double* nhat, double rstd, int n, double* dx) {
    double m1 = 0.0, m2 = 0.0;
    for (int i = 0; i < n; ++i) {
        m1 += dnhat[i];
        m2 += dnhat[i] * nhat[i];
    }
    m1 /= n;
    m2 /= n;
    for (int i = 0; i < n; ++i) dx[i] += rstd * (dnhat[i] - m1 - nhat[i] * m2);
}

void append(std::vector<double>& v, const double* x, int n) { v.insert(v.end(), x, x + n); }

// Inverted dropout: zero with probability rate, scale survivors by 1/(1-rate).
void draw_mask(Rng& rng, double rate, int n, std::vector<double>& out) {
    for (int i = 0; i < n; ++i)
        out.push_back(rng.next_unit() >= rate ? 1.0 / (1.0 - rate) : 0.0);
}

}  // namespace

TfRun tf_run(const LMConfig& cfg, bool store) {
    TfRun run;
    run.store = store;
    const auto L = static_cast<std::size_t>(cfg.num_layers);
    run.k.resize(L);
    run.v.resize(L);
    if (store) {
        run.x.resize(L + 1);
        run.xu.resize(L);
        run.u.resize(L);
        run.q.resize(L);
        run.alpha.resize(L);
        run.c.resize(L);
        run.a.resize(L);
        run.au.resize(L);
        run.w.resize(L);
        run.hpre.resize(L);
        run.rstd1.resize(L);
        run.rstd2.resize(L);
        run.d1.resize(L);
        run.d2.resize(L);
    }
    return run;
}

std::vector<double> tf_step(const LMConfig& cfg, const std::vector<double>& params, TfRun& run,
                            int id, Rng* dropout_rng) {
    const int E = cfg.embed_dim, H = cfg.hidden_dim, V = cfg.vocab_size;
    if (id < 0 || id >= V) throw DataError("token id out of range: " + std::to_string(id));
    if (run.len >= cfg.max_seq_len)
        throw DataError("sequence exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    const auto lay = TfLayout::make(cfg);
    const double* P = params.data();
    const int t = run.len;
    const bool drop = dropout_rng != nullptr && cfg.dropout > 0.0;

    std::vector<double> xcur(E);
    const double* tok = P + lay.tok.off + static_cast<std::size_t>(id) * E;
    const double* pos = P + lay.pos.off + static_cast<std::size_t>(t) * E;
    for (int i = 0; i < E; ++i) xcur[i] = tok[i] + pos[i];
    if (drop) {
        std::size_t base = run.d0.size();
        draw_mask(*dropout_rng, cfg.dropout, E, run.d0);
        for (int i = 0; i < E; ++i) xcur[i] *= run.d0[base + i];
    }
    if (run.store) append(run.x[0], xcur.data(), E);

    std::vector<double> nhat(E), u(E), q(E), kv(E), c(E), o(E), au(E), w(E), f(E);
    std::vector<double> hpre(H), hrelu(H);
    for (int l = 0; l < cfg.num_layers; ++l) {
        const TfLayer& ly = lay.layers[static_cast<std::size_t>(l)];
        double rstd1 = layer_norm(xcur.data(), E, nhat.data());
        for (int i = 0; i < E; ++i)
            u[i] = nhat[i] * P[ly.ln1_g.off + i] + P[ly.ln1_b.off + i];
        if (run.store) {
            append(run.xu[l], nhat.data(), E);
            append(run.u[l], u.data(), E);
            run.rstd1[l].push_back(rstd1);
        }

        matvec(P + ly.wq.off, E, E, u.data(), q.data());
        for (int i = 0; i < E; ++i) q[i] += P[ly.bq.off + i];
        matvec(P + ly.wk.off, E, E, u.data(), kv.data());
        for (int i = 0; i < E; ++i) kv[i] += P[ly.bk.off + i];
        append(run.k[l], kv.data(), E);
        matvec(P + ly.wv.off, E, E, u.data(), kv.data());
        for (int i = 0; i < E; ++i) kv[i] += P[ly.bv.off + i];
        append(run.v[l], kv.data(), E);
        if (run.store) append(run.q[l], q.data(), E);

        // causal attention over positions 0..t
        const double scale = 1.0 / std::sqrt(static_cast<double>(E));
        std::vector<double> scores(static_cast<std::size_t>(t) + 1);
        for (int j = 0; j <= t; ++j) {
            const double* kj = run.k[l].data() + static_cast<std::size_t>(j) * E;
            double s = 0.0;
            for (int i = 0; i < E; ++i) s += q[i] * kj[i];
            scores[static_cast<std::size_t>(j)] = s * scale;
        }
        double smax = scores[0];
        for (double s : scores) smax = std::max(smax, s);
        double ssum = 0.0;
        for (double& s : scores) {
            s = std::exp(s - smax);
            ssum += s;
        }
        for (double& s : scores) s /= ssum;
        std::fill(c.begin(), c.end(), 0.0);
        for (int j = 0; j <= t; ++j) {
            const double* vj = run.v[l].data() + static_cast<std::size_t>(j) * E;
            const double aj = scores[static_cast<std::size_t>(j)];
            for (int i = 0; i < E; ++i) c[i] += aj * vj[i];
        }
        if (run.store) {
            for (double s : scores) run.alpha[l].push_back(s);
            append(run.c[l], c.data(), E);
        }

        matvec(P + ly.wo.off, E, E, c.data(), o.data());
        for (int i = 0; i < E; ++i) o[i] += P[ly.bo.off + i];
        if (drop) {
            std::size_t base = run.d1[l].size();
            draw_mask(*dropout_rng, cfg.dropout, E, run.d1[l]);
            for (int i = 0; i < E; ++i) o[i] *= run.d1[l][base + i];
        }
        for (int i = 0; i < E; ++i) o[i] += xcur[i];  // o now holds a = x + attn
        if (run.store) append(run.a[l], o.data(), E);

        double rstd2 = layer_norm(o.data(), E, au.data());
        for (int i = 0; i < E; ++i)
            w[i] = au[i] * P[ly.ln2_g.off + i] + P[ly.ln2_b.off + i];
        if (run.store) {
            append(run.au[l], au.data(), E);
            append(run.w[l], w.data(), E);
            run.rstd2[l].push_back(rstd2);
        }

        matvec(P + ly.w1.off, E, H, w.data(), hpre.data());
        for (int i = 0; i < H; ++i) hpre[i] += P[ly.b1.off + i];
        if (run.store) append(run.hpre[l], hpre.data(), H);
        for (int i = 0; i < H; ++i) hrelu[i] = hpre[i] > 0.0 ? hpre[i] : 0.0;
        matvec(P + ly.w2.off, H, E, hrelu.data(), f.data());
        for (int i = 0; i < E; ++i) f[i] += P[ly.b2.off + i];
        if (drop) {
            std::size_t base = run.d2[l].size();
            draw_mask(*dropout_rng, cfg.dropout, E, run.d2[l]);
            for (int i = 0; i < E; ++i) f[i] *= run.d2[l][base + i];
        }
        for (int i = 0; i < E; ++i) xcur[i] = o[i] + f[i];
        if (run.store) append(run.x[static_cast<std::size_t>(l) + 1], xcur.data(), E);
    }

    double rstd3 = layer_norm(xcur.data(), E, nhat.data());
    std::vector<double> y(E);
    for (int i = 0; i < E; ++i)
        y[i] = nhat[i] * P[lay.lnf_g.off + i] + P[lay.lnf_b.off + i];
    if (run.store) {
        append(run.yu, nhat.data(), E);
        run.rstd3.push_back(rstd3);
    }

    std::vector<double> logits(V);
    matvec(P + lay.w_out.off, E, V, y.data(), logits.data());
    for (int i = 0; i < V; ++i) logits[i] += P[lay.b_out.off + i];

    run.ids.push_back(id);
    ++run.len;
    return logits;
}

void tf_backward(const LMConfig& cfg, const std::vector<double>& params, const TfRun& run,
                 const std::vector<double>& dlogits, std::vector<double>& grad) {
    const int E = cfg.embed_dim, H = cfg.hidden_dim, V = cfg.vocab_size;
    const int T = run.len;
    const auto lay = TfLayout::make(cfg);
    const double* P = params.data();
    double* G = grad.data();
    const bool drop = !run.d0.empty();

    auto at = [E](const std::vector<double>& buf, int t) {
        return buf.data() + static_cast<std::size_t>(t) * E;
    };

    // Head + final norm, producing dx for the top stream.
    std::vector<double> dx(static_cast<std::size_t>(T) * E, 0.0);
    std::vector<double> y(E), dy(E), dyu(E);
    for (int t = 0; t < T; ++t) {
        const double* dl = dlogits.data() + static_cast<std::size_t>(t) * V;
        const double* yu = at(run.yu, t);
        for (int i = 0; i < E; ++i)
            y[i] = yu[i] * P[lay.lnf_g.off + i] + P[lay.lnf_b.off + i];
        outer_acc(G + lay.w_out.off, E, V, y.data(), dl);
        for (int i = 0; i < V; ++i) G[lay.b_out.off + i] += dl[i];
        std::fill(dy.begin(), dy.end(), 0.0);
        matvec_t_acc(P + lay.w_out.off, E, V, dl, dy.data());
        for (int i = 0; i < E; ++i) {
            G[lay.lnf_g.off + i] += dy[i] * yu[i];
            G[lay.lnf_b.off + i] += dy[i];
            dyu[i] = dy[i] * P[lay.lnf_g.off + i];
        }
        layer_norm_backward(dyu.data(), yu, run.rstd3[static_cast<std::size_t>(t)], E,
                            dx.data() + static_cast<std::size_t>(t) * E);
    }

    std::vector<double> da(static_cast<std::size_t>(T) * E), dc(static_cast<std::size_t>(T) * E);
    std::vector<double> dq(static_cast<std::size_t>(T) * E), dk(static_cast<std::size_t>(T) * E),
        dv(static_cast<std::size_t>(T) * E);
    std::vector<double> df(E), dhrelu(H), dhpre(H), dw(E), dau(E), dov(E), hrelu(H);
    std::vector<double> dxnew(static_cast<std::size_t>(T) * E);

    for (int l = cfg.num_layers - 1; l >= 0; --l) {
        const TfLayer& ly = lay.layers[static_cast<std::size_t>(l)];
        std::fill(da.begin(), da.end(), 0.0);
        std::fill(dc.begin(), dc.end(), 0.0);

        for (int t = 0; t < T; ++t) {
            const double* dxl1 = dx.data() + static_cast<std::size_t>(t) * E;
            // x_{l+1} = a + f, f possibly dropout-masked after the projection
            for (int i = 0; i < E; ++i)
                df[i] = drop ? dxl1[i] * run.d2[l][static_cast<std::size_t>(t) * E + i] : dxl1[i];
            const double* hp = run.hpre[l].data() + static_cast<std::size_t>(t) * H;
            for (int i = 0; i < H; ++i) hrelu[i] = hp[i] > 0.0 ? hp[i] : 0.0;
            outer_acc(G + ly.w2.off, H, E, hrelu.data(), df.data());
            for (int i = 0; i < E; ++i) G[ly.b2.off + i] += df[i];
            std::fill(dhrelu.begin(), dhrelu.end(), 0.0);
            matvec_t_acc(P + ly.w2.off, H, E, df.data(), dhrelu.data());
            for (int i = 0; i < H; ++i) dhpre[i] = hp[i] > 0.0 ? dhrelu[i] : 0.0;
            const double* wt = at(run.w[l], t);
            outer_acc(G + ly.w1.off, E, H, wt, dhpre.data());
            for (int i = 0; i < H; ++i) G[ly.b1.off + i] += dhpre[i];
            std::fill(dw.begin(), dw.end(), 0.0);
            matvec_t_acc(P + ly.w1.off, E, H, dhpre.data(), dw.data());
            const double* aut = at(run.au[l], t);
            for (int i = 0; i < E; ++i) {
                G[ly.ln2_g.off + i] += dw[i] * aut[i];
                G[ly.ln2_b.off + i] += dw[i];
                dau[i] = dw[i] * P[ly.ln2_g.off + i];
            }
            double* dat = da.data() + static_cast<std::size_t>(t) * E;
            for (int i = 0; i < E; ++i) dat[i] = dxl1[i];  // residual through x_{l+1}
            layer_norm_backward(dau.data(), aut, run.rstd2[l][static_cast<std::size_t>(t)], E,
                                dat);
            // a = x + o, o dropout-masked after the projection
            for (int i = 0; i < E; ++i)
                dov[i] = drop ? dat[i] * run.d1[l][static_cast<std::size_t>(t) * E + i] : dat[i];
            outer_acc(G + ly.wo.off, E, E, at(run.c[l], t), dov.data());
            for (int i = 0; i < E; ++i) G[ly.bo.off + i] += dov[i];
            matvec_t_acc(P + ly.wo.off, E, E, dov.data(),
                         dc.data() + static_cast<std::size_t>(t) * E);
        }

        // attention backward across positions
        std::fill(dq.begin(), dq.end(), 0.0);
        std::fill(dk.begin(), dk.end(), 0.0);
        std::fill(dv.begin(), dv.end(), 0.0);
        const double scale = 1.0 / std::sqrt(static_cast<double>(E));
        for (int t = 0; t < T; ++t) {
            const std::size_t aoff =
                static_cast<std::size_t>(t) * (static_cast<std::size_t>(t) + 1) / 2;
            const double* row = run.alpha[l].data() + aoff;
            const double* dct = dc.data() + static_cast<std::size_t>(t) * E;
            std::vector<double> dalpha(static_cast<std::size_t>(t) + 1);
            for (int j = 0; j <= t; ++j) {
                const double* vj = run.v[l].data() + static_cast<std::size_t>(j) * E;
                double* dvj = dv.data() + static_cast<std::size_t>(j) * E;
                double acc = 0.0;
                for (int i = 0; i < E; ++i) {
                    acc += vj[i] * dct[i];
                    dvj[i] += row[j] * dct[i];
                }
                dalpha[static_cast<std::size_t>(j)] = acc;
            }
            double dotsum = 0.0;
            for (int j = 0; j <= t; ++j) dotsum += row[j] * dalpha[static_cast<std::size_t>(j)];
            const double* qt = at(run.q[l], t);
            double* dqt = dq.data() + static_cast<std::size_t>(t) * E;
            for (int j = 0; j <= t; ++j) {
                double ds = row[j] * (dalpha[static_cast<std::size_t>(j)] - dotsum) * scale;
                const double* kj = run.k[l].data() + static_cast<std::size_t>(j) * E;
                double* dkj = dk.data() + static_cast<std::size_t>(j) * E;
                for (int i = 0; i < E; ++i) {
                    dqt[i] += ds * kj[i];
                    dkj[i] += ds * qt[i];
                }
            }
        }

        std::vector<double> du(E);
        for (int t = 0; t < T; ++t) {
            const double* ut = at(run.u[l], t);
            std::fill(du.begin(), du.end(), 0.0);
            const double* dqt = dq.data() + static_cast<std::size_t>(t) * E;
            outer_acc(G + ly.wq.off, E, E, ut, dqt);
            for (int i = 0; i < E; ++i) G[ly.bq.off + i] += dqt[i];
            matvec_t_acc(P + ly.wq.off, E, E, dqt, du.data());
            const double* dkt = dk.data() + static_cast<std::size_t>(t) * E;
            outer_acc(G + ly.wk.off, E, E, ut, dkt);
            for (int i = 0; i < E; ++i) G[ly.bk.off + i] += dkt[i];
            matvec_t_acc(P + ly.wk.off, E, E, dkt, du.data());
            const double* dvt = dv.data() + static_cast<std::size_t>(t) * E;
            outer_acc(G + ly.wv.off, E, E, ut, dvt);
            for (int i = 0; i < E; ++i) G[ly.bv.off + i] += dvt[i];
            matvec_t_acc(P + ly.wv.off, E, E, dvt, du.data());

            const double* xut = at(run.xu[l], t);
            std::vector<double> dxu(E);
            for (int i = 0; i < E; ++i) {
                G[ly.ln1_g.off + i] += du[i] * xut[i];
                G[ly.ln1_b.off + i] += du[i];
                dxu[static_cast<std::size_t>(i)] = du[i] * P[ly.ln1_g.off + i];
            }
            double* out = dxnew.data() + static_cast<std::size_t>(t) * E;
            const double* dat = da.data() + static_cast<std::size_t>(t) * E;
            for (int i = 0; i < E; ++i) out[i] = dat[i];  // residual through a
            layer_norm_backward(dxu.data(), xut, run.rstd1[l][static_cast<std::size_t>(t)], E,
                                out);
        }
        std::swap(dx, dxnew);
    }

    for (int t = 0; t < T; ++t) {
        const double* dxt = dx.data() + static_cast<std::size_t>(t) * E;
        const int id = run.ids[static_cast<std::size_t>(t)];
        double* gtok = G + lay.tok.off + static_cast<std::size_t>(id) * E;
        double* gpos = G + lay.pos.off + static_cast<std::size_t>(t) * E;
        for (int i = 0; i < E; ++i) {
            double de = drop ? dxt[i] * run.d0[static_cast<std::size_t>(t) * E + i] : dxt[i];
            gtok[i] += de;
            gpos[i] += de;
        }
    }
}

TfLayout TfLayout::make(const LMConfig& cfg) {
    TfLayout lay;
    std::size_t off = 0;
    auto add = [&off](int rows, int cols) {
        Tensor t{off, rows, cols};
        off += t.size();
        return t;
    };
    const int E = cfg.embed_dim, H = cfg.hidden_dim, V = cfg.vocab_size;
    lay.tok = add(V, E);
    lay.pos = add(cfg.max_seq_len, E);
    for (int l = 0; l < cfg.num_layers; ++l) {
        TfLayer ly;
        ly.ln1_g = add(E, 1);
        ly.ln1_b = add(E, 1);
        ly.wq = add(E, E);
        ly.bq = add(E, 1);
        ly.wk = add(E, E);
        ly.bk = add(E, 1);
        ly.wv = add(E, E);
        ly.bv = add(E, 1);
        ly.wo = add(E, E);
        ly.bo = add(E, 1);
        ly.ln2_g = add(E, 1);
        ly.ln2_b = add(E, 1);
        ly.w1 = add(E, H);
        ly.b1 = add(H, 1);
        ly.w2 = add(H, E);
        ly.b2 = add(E, 1);
        lay.layers.push_back(ly);
    }
    lay.lnf_g = add(E, 1);
    lay.lnf_b = add(E, 1);
    lay.w_out = add(E, V);
    lay.b_out = add(V, 1);
    lay.total = off;
    return lay;
}

}  // namespace gcn::detail
