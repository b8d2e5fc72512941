#include "emae/gradcheck.hpp"

#include <cmath>
#include <cstdio>
#include <functional>

#include "emae/errors.hpp"
#include "emae/losses.hpp"
#include "emae/rng.hpp"

namespace emae {

namespace {

Values random_values(CounterRng& rng, int64_t count, double lo = -1.0, double hi = 1.0) {
    Values v(count);
    for (double& x : v) x = lo + (hi - lo) * rng.next_unit();
    return v;
}

void nudge_from_zero(Values& v, double margin = 1e-3) {
    for (double& x : v) {
        if (std::abs(x) < margin) x = margin;
    }
}

using OpFn = std::function<Tensor(Graph&, const Tensor&, int r, int c, const Values& other,
                                  const Values& w)>;

struct OpSpec {
    std::string name;
    OpFn fn;
};

std::vector<OpSpec> op_specs() {
    return {
        {"add",
         [](Graph& g, const Tensor& x, int r, int c, const Values& other, const Values&) {
             return g.mean(g.square(g.add(x, g.constant({r, c}, other))));
         }},
        {"sub",
         [](Graph& g, const Tensor& x, int r, int c, const Values& other, const Values&) {
             return g.mean(g.square(g.sub(x, g.constant({r, c}, other))));
         }},
        {"mul",
         [](Graph& g, const Tensor& x, int r, int c, const Values& other, const Values&) {
             return g.mean(g.mul(x, g.constant({r, c}, other)));
         }},
        {"scale",
         [](Graph& g, const Tensor& x, int, int, const Values&, const Values&) {
             return g.mean(g.square(g.scale(x, 1.7)));
         }},
        {"matmul",
         [](Graph& g, const Tensor& x, int, int c, const Values&, const Values& w) {
             return g.mean(g.square(g.matmul(x, g.constant({c, 3}, w))));
         }},
        {"transpose",
         [](Graph& g, const Tensor& x, int r, int c, const Values& other, const Values&) {
             Values ot(other.begin(), other.begin() + static_cast<int64_t>(r) * c);
             return g.mean(g.mul(g.transpose(x), g.constant({c, r}, ot)));
         }},
        {"reshape",
         [](Graph& g, const Tensor& x, int r, int c, const Values&, const Values&) {
             return g.mean(g.square(g.reshape(x, {c, r})));
         }},
        {"gather_rows",
         [](Graph& g, const Tensor& x, int r, int, const Values&, const Values&) {
             return g.mean(g.square(g.gather_rows(x, {0, r - 1, 0})));
         }},
        {"scatter_rows",
         [](Graph& g, const Tensor& x, int r, int, const Values&, const Values&) {
             return g.mean(g.square(g.scatter_rows(x, std::vector<int>(r, 1), r + 2)));
         }},
        {"concat",
         [](Graph& g, const Tensor& x, int, int, const Values&, const Values&) {
             return g.mean(g.square(g.concat({x, x}, 1)));
         }},
        {"slice",
         [](Graph& g, const Tensor& x, int, int c, const Values&, const Values&) {
             return g.mean(g.square(g.slice(x, 1, 1, c - 1)));
         }},
        {"sum",
         [](Graph& g, const Tensor& x, int, int, const Values&, const Values&) {
             return g.sum(g.square(x));
         }},
        {"mean",
         [](Graph& g, const Tensor& x, int, int, const Values&, const Values&) {
             return g.mean(g.square(x));
         }},
        {"softmax",
         [](Graph& g, const Tensor& x, int, int, const Values&, const Values&) {
             return g.mean(g.square(g.softmax(x)));
         }},
        {"layer_norm",
         [](Graph& g, const Tensor& x, int r, int c, const Values& other, const Values&) {
             return g.mean(g.mul(g.layer_norm(x, 1e-6), g.constant({r, c}, other)));
         }},
        {"gelu",
         [](Graph& g, const Tensor& x, int, int, const Values&, const Values&) {
             return g.mean(g.gelu(x));
         }},
        {"abs",
         [](Graph& g, const Tensor& x, int, int, const Values&, const Values&) {
             return g.mean(g.abs(x));
         }},
        {"square",
         [](Graph& g, const Tensor& x, int, int, const Values&, const Values&) {
             return g.mean(g.square(x));
         }},
        {"log",
         [](Graph& g, const Tensor& x, int, int, const Values&, const Values&) {
             // inputs shifted positive before the log
             return g.mean(g.log(g.add(x, g.scalar(3.0))));
         }},
    };
}

// Finite differences cannot see a stop_gradient (the numeric derivative
// includes the stopped path), so this op is checked against the closed-form
// gradients its semantics dictate: d mean(x * sg(x)) = x/n and
// d mean(sg(x^2)) = 0.
CheckOutcome check_stop_gradient(int draws, double tol, uint64_t seed) {
    CheckOutcome oc{"stop_gradient", 0.0, true};
    for (int d = 0; d < draws; ++d) {
        CounterRng rng(CounterRng::derive(seed, 0x7367, d));
        const int n = 4 + static_cast<int>(rng.next_below(8));
        Values x0 = random_values(rng, n);

        Graph g;
        Tensor x = g.param({n}, std::make_shared<Values>(x0));
        g.backward(g.mean(g.mul(x, g.stop_gradient(x))));
        const Values& got = g.grad(x);
        for (int i = 0; i < n; ++i) {
            const double want = x0[i] / n;
            const double rel =
                std::abs(got[i] - want) / std::max({std::abs(got[i]), std::abs(want), 1e-8});
            oc.max_rel_error = std::max(oc.max_rel_error, rel);
            if (rel > tol) oc.pass = false;
        }

        Graph g2;
        Tensor x2 = g2.param({n}, std::make_shared<Values>(x0));
        g2.backward(g2.mean(g2.stop_gradient(g2.square(x2))));
        for (double gv : g2.grad(x2)) {
            if (gv != 0.0) {
                oc.pass = false;
                oc.max_rel_error = std::max(oc.max_rel_error, std::abs(gv));
            }
        }
    }
    return oc;
}

}  // namespace

std::vector<CheckOutcome> check_ops(int draws, double tol, uint64_t seed) {
    if (tol <= 0) throw ConfigError("tolerance must be positive");
    std::vector<CheckOutcome> out;
    for (const OpSpec& spec : op_specs()) {
        CheckOutcome oc{spec.name, 0.0, true};
        for (int d = 0; d < draws; ++d) {
            CounterRng rng(CounterRng::derive(seed, std::hash<std::string>{}(spec.name), d));
            const int r = 2 + static_cast<int>(rng.next_below(5));
            const int c = 2 + static_cast<int>(rng.next_below(5));
            Values x0 = random_values(rng, static_cast<int64_t>(r) * c);
            nudge_from_zero(x0);
            Values other = random_values(rng, static_cast<int64_t>(r) * c);
            Values w = random_values(rng, static_cast<int64_t>(c) * 3);
            auto f = [&](Graph& g, const Tensor& x) { return spec.fn(g, x, r, c, other, w); };
            GradCheckReport rep = grad_check(f, {r, c}, x0, 1e-5, tol);
            oc.max_rel_error = std::max(oc.max_rel_error, rep.max_rel_error);
            if (!rep.pass) oc.pass = false;
        }
        out.push_back(oc);
    }
    out.push_back(check_stop_gradient(draws, tol, seed));
    return out;
}

namespace {

// Worst relative FD error over sampled parameter coordinates of a scalar
// model functional. Rebuilds the forward per probe; parameters are restored
// after each perturbation. When a kink signature is supplied, probes whose
// +/-h evaluations land on different linear pieces are discarded (the FD
// quotient spans a non-smooth point there and measures nothing).
CheckOutcome probe_params(const std::string& name, Model& model,
                          const std::function<double()>& value,
                          const std::function<void(Graph&, std::vector<const Values*>&)>& grad,
                          int n_probes, double h, double tol, CounterRng& rng,
                          const std::function<std::vector<int8_t>()>& kink_signature = nullptr) {
    Graph g;
    std::vector<const Values*> grads;
    grad(g, grads);

    CheckOutcome oc{name, 0.0, true};
    const auto& params = model.params();
    int done = 0;
    for (int attempt = 0; done < n_probes && attempt < 40 * n_probes; ++attempt) {
        const size_t pi = static_cast<size_t>(rng.next_below(params.size()));
        Values& data = *params[pi].data;
        const size_t qi = static_cast<size_t>(rng.next_below(data.size()));
        const double saved = data[qi];

        data[qi] = saved + h;
        const double up = value();
        std::vector<int8_t> sig_up;
        if (kink_signature) sig_up = kink_signature();
        data[qi] = saved - h;
        const double down = value();
        std::vector<int8_t> sig_down;
        if (kink_signature) sig_down = kink_signature();
        data[qi] = saved;
        if (kink_signature && sig_up != sig_down) continue;

        const double numeric = (up - down) / (2 * h);
        const double analytic = grads[pi] ? (*grads[pi])[qi] : 0.0;
        // Below the floor both sides are indistinguishable from zero; the
        // numeric side carries rounding noise of order eps/h there.
        const double rel =
            (std::abs(analytic) < 1e-8 && std::abs(numeric) < 1e-8)
                ? 0.0
                : std::abs(analytic - numeric) /
                      std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        oc.max_rel_error = std::max(oc.max_rel_error, rel);
        if (rel > tol) {
            oc.pass = false;
            std::fprintf(stderr, "probe %s[%zu] analytic=%.6e numeric=%.6e rel=%.3e\n",
                         params[pi].name.c_str(), qi, analytic, numeric, rel);
        }
        ++done;
    }
    if (done < n_probes) oc.pass = false;  // could not find enough smooth probes
    return oc;
}

std::vector<const Values*> collect_grads(Graph& g, const Model& model) {
    std::vector<const Values*> grads;
    for (const NamedParam& prm : model.params()) {
        grads.push_back(g.has_param(prm.data) ? &g.grad_for(prm.data) : nullptr);
    }
    return grads;
}

}  // namespace

CheckOutcome check_model(const ModelConfig& cfg, int draws, double tol, uint64_t seed) {
    if (tol <= 0) throw ConfigError("tolerance must be positive");
    CheckOutcome total{"model-forward", 0.0, true};
    for (int d = 0; d < draws; ++d) {
        CounterRng rng(CounterRng::derive(seed, 0x6d6f64, d));
        Model model(cfg);
        model.init_params(rng.next_u64());
        Values image = random_values(rng, static_cast<int64_t>(cfg.img_h) * cfg.img_w *
                                              cfg.channels, 0.0, 1.0);
        const PatchGrid grid = patchify(image, cfg);
        const int k = cfg.n_patches() % 4 == 0 ? 4 : 2;
        const MaskPartition part = generate_partition(cfg.n_patches(), k, rng.next_u64());

        auto value = [&]() {
            Graph g;
            return g.mean(model.forward_part(g, grid, part, 0).pred).item();
        };
        auto grad = [&](Graph& g, std::vector<const Values*>& grads) {
            g.backward(g.mean(model.forward_part(g, grid, part, 0).pred));
            grads = collect_grads(g, model);
        };
        CheckOutcome oc = probe_params("model-forward", model, value, grad, 12, 1e-5, tol, rng);
        total.max_rel_error = std::max(total.max_rel_error, oc.max_rel_error);
        if (!oc.pass) total.pass = false;
    }
    return total;
}

CheckOutcome check_total_loss(const ModelConfig& cfg, int k_parts, int draws, double tol,
                              uint64_t seed) {
    if (tol <= 0) throw ConfigError("tolerance must be positive");
    CheckOutcome total{"total-loss", 0.0, true};
    for (int d = 0; d < draws; ++d) {
        CounterRng rng(CounterRng::derive(seed, 0x6c6f7373, d));
        Model model(cfg);
        // Standard-size init keeps part predictions nearly identical, parking
        // every |pred_i - pred_j| near its kink; noisy parameters spread them
        // out so most probes are smooth.
        model.init_params(rng.next_u64());
        for (const NamedParam& prm : model.params()) {
            for (double& v : *prm.data) v += -0.3 + 0.6 * rng.next_unit();
        }
        Values image = random_values(rng, static_cast<int64_t>(cfg.img_h) * cfg.img_w *
                                              cfg.channels, 0.0, 1.0);
        const PatchGrid grid = patchify(image, cfg);
        const MaskPartition part = generate_partition(cfg.n_patches(), k_parts, rng.next_u64());
        const int n = cfg.n_patches();
        const int s = cfg.patch_dim();

        Values target;
        {
            Graph g;
            target = reconstruction_target(g, grid, true).values();
        }
        auto forward_values = [&]() {
            Graph g;
            auto preds = model.forward_all_parts(g, grid, part);
            std::vector<Values> out;
            out.reserve(preds.size());
            for (const PartPrediction& p : preds) out.push_back(p.pred.values());
            return out;
        };
        std::vector<std::vector<uint8_t>> masks;
        {
            Graph g;
            for (const PartPrediction& p : model.forward_all_parts(g, grid, part)) {
                masks.push_back(p.valid_mask);
            }
        }
        const int k = static_cast<int>(masks.size());
        // Predictions at the unperturbed parameters. The consistency loss
        // defines its gradient with the stopped operand held constant, so the
        // numeric oracle must hold these fixed while the live operand moves;
        // plain differences of the forward value would measure the derivative
        // through both operands instead.
        const std::vector<Values> frozen = forward_values();

        auto value = [&]() {
            const std::vector<Values> cur = forward_values();
            double lw = 0.0;
            for (int i = 0; i < k; ++i) {
                double acc = 0.0;
                int64_t cnt = 0;
                for (int p = 0; p < n; ++p) {
                    if (!masks[i][p]) continue;
                    for (int q = 0; q < s; ++q) {
                        const double diff = cur[i][static_cast<int64_t>(p) * s + q] -
                                            target[static_cast<int64_t>(p) * s + q];
                        acc += diff * diff;
                        ++cnt;
                    }
                }
                lw += acc / static_cast<double>(cnt);
            }
            lw /= k;
            double lc = 0.0;
            int pairs = 0;
            for (int i = 0; i < k; ++i) {
                for (int j = i + 1; j < k; ++j) {
                    auto both = mask_intersection(masks[i], masks[j]);
                    double acc = 0.0;
                    int64_t cnt = 0;
                    for (int p = 0; p < n; ++p) {
                        if (!both[p]) continue;
                        for (int q = 0; q < s; ++q) {
                            const int64_t e = static_cast<int64_t>(p) * s + q;
                            acc += std::abs(frozen[i][e] - cur[j][e]);
                            acc += std::abs(cur[i][e] - frozen[j][e]);
                            ++cnt;
                        }
                    }
                    if (cnt > 0) lc += acc / static_cast<double>(cnt);
                    ++pairs;
                }
            }
            if (pairs > 0) lc /= pairs;
            return lw + lc;
        };
        auto grad = [&](Graph& g, std::vector<const Values*>& grads) {
            auto preds = model.forward_all_parts(g, grid, part);
            Tensor tgt = reconstruction_target(g, grid, true);
            g.backward(total_loss(g, preds, tgt, LossMode::Full).l_total);
            grads = collect_grads(g, model);
        };
        // signs of every |.| argument in the oracle; a probe is valid only if
        // both endpoints agree on all of them
        auto signature = [&]() {
            const std::vector<Values> cur = forward_values();
            std::vector<int8_t> signs;
            for (int i = 0; i < k; ++i) {
                for (int j = i + 1; j < k; ++j) {
                    auto both = mask_intersection(masks[i], masks[j]);
                    for (int p = 0; p < n; ++p) {
                        if (!both[p]) continue;
                        for (int q = 0; q < s; ++q) {
                            const int64_t e = static_cast<int64_t>(p) * s + q;
                            const double d1 = frozen[i][e] - cur[j][e];
                            const double d2 = cur[i][e] - frozen[j][e];
                            signs.push_back(d1 > 0 ? 1 : (d1 < 0 ? -1 : 0));
                            signs.push_back(d2 > 0 ? 1 : (d2 < 0 ? -1 : 0));
                        }
                    }
                }
            }
            return signs;
        };
        CheckOutcome oc =
            probe_params("total-loss", model, value, grad, 12, 1e-5, tol, rng, signature);
        total.max_rel_error = std::max(total.max_rel_error, oc.max_rel_error);
        if (!oc.pass) total.pass = false;
    }
    return total;
}

}  // namespace emae
