#include "caliber/variational.hpp"

#include <cmath>

#include "caliber/errors.hpp"
#include "caliber/ops.hpp"

namespace caliber {

void PriorConfig::validate() const {
    if (!(beta > 0.0)) throw ConfigError("prior: beta must be > 0");
    if (gamma < 0.0) throw ConfigError("prior: gamma must be >= 0");
    if (!(epsilon > 0.0)) throw ConfigError("prior: epsilon must be > 0");
    if (!(delta > 0.0)) throw ConfigError("prior: delta must be > 0");
}

std::vector<double> context_summary(const std::vector<double>& z, const std::vector<double>& u) {
    if (z.size() != u.size())
        throw DimensionError("context_summary: z and u must have equal length");
    std::vector<double> eta;
    eta.reserve(z.size() * 2);
    eta.insert(eta.end(), z.begin(), z.end());
    eta.insert(eta.end(), u.begin(), u.end());
    return eta;
}

double kl_to_prior(const std::vector<double>& mu, const std::vector<double>& sigma, double beta) {
    if (!(beta > 0.0)) throw DomainError("kl_to_prior: beta must be > 0");
    if (mu.size() != sigma.size()) throw DimensionError("kl_to_prior: length mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        if (!(sigma[i] > 0.0)) throw DomainError("kl_to_prior: sigma must be > 0");
        kl += std::log(beta / sigma[i]) +
              (sigma[i] * sigma[i] + mu[i] * mu[i]) / (2.0 * beta * beta) - 0.5;
    }
    return kl;
}

Matrix sample_latent(const PosteriorMoments& m, int r, Rng& rng) {
    std::vector<double> xi(m.mu.size());
    for (double& x : xi) x = rng.next_normal();
    return sample_latent_frozen(m, r, xi);
}

Matrix sample_latent_frozen(const PosteriorMoments& m, int r, const std::vector<double>& xi) {
    if (m.mu.size() != m.sigma.size() || m.mu.size() != xi.size() ||
        static_cast<int>(m.mu.size()) != r * r)
        throw DimensionError("sample_latent: length mismatch");
    Matrix e(r, r);
    for (int i = 0; i < r * r; ++i) e.data[i] = m.mu[i] + m.sigma[i] * xi[i];
    return e;
}

PosteriorNodes posterior_params(Tape& tape, Tape::Id eta, const InferenceHeadParams& head,
                                const PriorConfig& prior) {
    const int r2 = head.rank * head.rank;
    Tape::Id hidden = tape.tanh_of(
        tape.add_rowvec(tape.matmul(eta, tape.param(head.w1)), tape.param(head.b1)));
    Tape::Id out =
        tape.add_rowvec(tape.matmul(hidden, tape.param(head.w2)), tape.param(head.b2));
    if (!tape.value(out).all_finite())
        throw NumericError("posterior_params: non-finite inference head output");
    PosteriorNodes nodes;
    nodes.mu = tape.slice_cols(out, 0, r2);
    Tape::Id raw = tape.slice_cols(out, r2, r2);
    nodes.sigma = tape.add_scalar(tape.scale(tape.softplus_of(raw), prior.epsilon), prior.delta);
    return nodes;
}

Tape::Id kl_node(Tape& tape, Tape::Id mu, Tape::Id sigma, double beta) {
    if (!(beta > 0.0)) throw DomainError("kl_node: beta must be > 0");
    // log(beta) - log(sigma) + (sigma^2 + mu^2) / (2 beta^2) - 1/2, summed
    Tape::Id log_sigma = tape.log_of(sigma);
    Tape::Id sq = tape.add(tape.hadamard(sigma, sigma), tape.hadamard(mu, mu));
    Tape::Id quad = tape.scale(sq, 1.0 / (2.0 * beta * beta));
    Tape::Id per_elem =
        tape.add_scalar(tape.sub(quad, log_sigma), std::log(beta) - 0.5);
    return tape.reduce_sum(per_elem);
}

}  // namespace caliber
