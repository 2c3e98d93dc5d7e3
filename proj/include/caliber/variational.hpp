#pragma once

#include <vector>

#include "caliber/matrix.hpp"
#include "caliber/rng.hpp"
#include "caliber/tape.hpp"

namespace caliber {

struct PriorConfig {
    double beta = 0.2;      // prior std
    double gamma = 0.008;   // KL weight
    double epsilon = 0.05;  // softplus scale
    double delta = 1e-6;    // variance floor

    void validate() const;
};

struct PosteriorMoments {
    std::vector<double> mu;
    std::vector<double> sigma;  // strictly positive
};

// [z; u] concatenation; both must have equal length.
std::vector<double> context_summary(const std::vector<double>& z, const std::vector<double>& u);

// Closed-form KL( N(mu, diag(sigma^2)) || N(0, beta^2 I) ):
//   sum_i [ log(beta/sigma_i) + (sigma_i^2 + mu_i^2) / (2 beta^2) - 1/2 ]
double kl_to_prior(const std::vector<double>& mu, const std::vector<double>& sigma, double beta);

// Reparameterized draw vec(E) = mu + sigma .* xi, reshaped row-major to r x r.
Matrix sample_latent(const PosteriorMoments& m, int r, Rng& rng);
Matrix sample_latent_frozen(const PosteriorMoments& m, int r, const std::vector<double>& xi);

// Inference head: two-layer tanh perceptron 2r -> 4r -> 2r^2, the output
// split into the mean and raw log-variance halves. The final layer is
// zero-initialized so mu = 0 and sigma = epsilon*softplus(0) + delta at init.
struct InferenceHeadParams {
    ParamId w1 = -1, b1 = -1, w2 = -1, b2 = -1;
    int rank = 0;
};

struct PosteriorNodes {
    Tape::Id mu = -1;     // 1 x r^2
    Tape::Id sigma = -1;  // 1 x r^2
};

// eta is a 1 x 2r node; sigma = epsilon * softplus(raw) + delta elementwise.
PosteriorNodes posterior_params(Tape& tape, Tape::Id eta, const InferenceHeadParams& head,
                                const PriorConfig& prior);

// Graph version of the closed-form KL; mu/sigma nodes of any equal shape,
// result 1x1.
Tape::Id kl_node(Tape& tape, Tape::Id mu, Tape::Id sigma, double beta);

struct ElboBreakdown {
    double log_likelihood = 0.0;        // summed over the batch
    std::vector<double> kl_per_layer;   // per adapter site, token-averaged
    double total = 0.0;                 // log_likelihood - gamma * sum(kl)
};

}  // namespace caliber
