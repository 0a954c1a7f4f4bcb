#include "adareg/losses.hpp"

#include <cmath>
#include <limits>

#include "adareg/error.hpp"
#include "adareg/ops.hpp"

namespace adareg::loss {

std::vector<double> smoothed_labels(std::size_t label, const SmoothingConfig& config) {
  if (config.num_classes == 0) throw ValidationError("label smoothing needs at least one class");
  if (!(config.epsilon >= 0.0 && config.epsilon < 1.0)) throw ValidationError("label smoothing epsilon must lie in [0, 1)");
  if (label < 1 || label > config.num_classes) {
    throw ValidationError("label " + std::to_string(label) + " outside [1, " + std::to_string(config.num_classes) + "]");
  }
  const double off = config.epsilon / static_cast<double>(config.num_classes);
  std::vector<double> q(config.num_classes, off);
  q[label - 1] = (1.0 - config.epsilon) + off;
  return q;
}

ad::Tensor smoothed_targets(std::span<const std::size_t> labels, const SmoothingConfig& config) {
  if (labels.empty()) throw ValidationError("no labels");
  ad::Tensor t({labels.size(), config.num_classes});
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const auto q = smoothed_labels(labels[r], config);
    std::copy(q.begin(), q.end(), &t[r * config.num_classes]);
  }
  return t;
}

ad::Var cross_entropy(ad::Var logits, const ad::Tensor& targets) {
  const ad::Shape& s = logits.shape();
  if (s.size() != 2 || targets.shape() != s) {
    throw ValidationError("cross_entropy: logits " + ad::to_string(s) + " vs targets " + ad::to_string(targets.shape()));
  }
  if (!logits.value().all_finite()) throw NumericError("cross_entropy: non-finite logits");
  const std::size_t rows = s[0], cols = s[1];
  const ad::Tensor& z = logits.value();
  ad::Tensor probs({rows, cols});
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* zr = &z[r * cols];
    double mx = zr[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, zr[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < cols; ++j) denom += std::exp(zr[j] - mx);
    const double lse = mx + std::log(denom);
    double row = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      row += targets[r * cols + j] * (lse - zr[j]);
      probs[r * cols + j] = std::exp(zr[j] - lse);
    }
    total += row;
  }
  const double inv_rows = 1.0 / static_cast<double>(rows);
  return logits.tape().record(ad::Tensor::scalar(total * inv_rows), {logits},
                              [probs = std::move(probs), targets, rows, cols, inv_rows](const ad::BackwardContext& ctx) {
                                ad::Tensor& gz = *ctx.input_grads[0];
                                const double g = ctx.grad[0] * inv_rows;
                                for (std::size_t r = 0; r < rows; ++r) {
                                  double mass = 0.0;
                                  for (std::size_t j = 0; j < cols; ++j) mass += targets[r * cols + j];
                                  for (std::size_t j = 0; j < cols; ++j) {
                                    const std::size_t i = r * cols + j;
                                    gz[i] += g * (probs[i] * mass - targets[i]);
                                  }
                                }
                              });
}

double euclidean(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    acc += d * d;
  }
  return std::sqrt(acc);
}

ad::Var batch_hard_triplet(ad::Var embeddings, std::span<const std::int64_t> ids, const TripletConfig& config) {
  const ad::Shape& s = embeddings.shape();
  if (s.size() != 2) throw ValidationError("triplet loss expects B x D embeddings, got " + ad::to_string(s));
  if (ids.size() != s[0]) throw ValidationError("triplet loss: " + std::to_string(ids.size()) + " ids for batch of " + std::to_string(s[0]));
  if (!(config.margin >= 0.0)) throw ValidationError("triplet margin must be non-negative");
  const std::size_t batch = s[0], dim = s[1];
  const ad::Tensor& e = embeddings.value();
  auto row = [&](std::size_t i) { return std::span<const double>(&e[i * dim], dim); };

  struct Mined {
    std::size_t pos, neg;
    double dpos, dneg;
    bool active;
  };
  std::vector<Mined> mined(batch);
  ad::Tape& tape = embeddings.tape();
  double total = 0.0;
  for (std::size_t a = 0; a < batch; ++a) {
    Mined m{0, 0, -1.0, std::numeric_limits<double>::infinity(), false};
    bool has_pos = false, has_neg = false;
    for (std::size_t b = 0; b < batch; ++b) {
      if (b == a) continue;
      const double d = euclidean(row(a), row(b));
      if (ids[b] == ids[a]) {
        if (!has_pos || d > m.dpos) {
          m.pos = b;
          m.dpos = d;
        }
        has_pos = true;
      } else {
        if (!has_neg || d < m.dneg) {
          m.neg = b;
          m.dneg = d;
        }
        has_neg = true;
      }
    }
    if (!has_pos || !has_neg) {
      throw ValidationError("triplet loss: anchor " + std::to_string(a) + " (id " + std::to_string(ids[a]) + ") has no " +
                            (has_pos ? "negative" : "positive"));
    }
    const double hinge = config.margin + m.dpos - m.dneg;
    m.active = hinge > 0.0;
    if (m.active) total += hinge;
    if (tape.tracking_branches()) {
      tape.note_branch((static_cast<std::uint64_t>(m.pos) << 32) ^ (static_cast<std::uint64_t>(m.neg) << 1) ^
                       (m.active ? 1U : 0U));
    }
    mined[a] = m;
  }
  const double inv_batch = 1.0 / static_cast<double>(batch);
  return tape.record(ad::Tensor::scalar(total / static_cast<double>(batch)), {embeddings},
                     [mined = std::move(mined), dim, inv_batch](const ad::BackwardContext& ctx) {
                       const ad::Tensor& e = *ctx.inputs[0];
                       ad::Tensor& ge = *ctx.input_grads[0];
                       const double c = ctx.grad[0] * inv_batch;
                       for (std::size_t a = 0; a < mined.size(); ++a) {
                         const Mined& m = mined[a];
                         if (!m.active) continue;
                         // d|x - y| / dx = (x - y) / |x - y|, taken as 0 at coincident points
                         for (std::size_t k = 0; k < dim; ++k) {
                           if (m.dpos > 0.0) {
                             const double u = c * (e[a * dim + k] - e[m.pos * dim + k]) / m.dpos;
                             ge[a * dim + k] += u;
                             ge[m.pos * dim + k] -= u;
                           }
                           if (m.dneg > 0.0) {
                             const double v = c * (e[a * dim + k] - e[m.neg * dim + k]) / m.dneg;
                             ge[a * dim + k] -= v;
                             ge[m.neg * dim + k] += v;
                           }
                         }
                       }
                     });
}

ad::Var total_loss(std::span<const ad::Var> ce_terms, std::span<const ad::Var> triplet_terms,
                   std::optional<ad::Var> penalty) {
  std::vector<ad::Var> terms(ce_terms.begin(), ce_terms.end());
  terms.insert(terms.end(), triplet_terms.begin(), triplet_terms.end());
  if (penalty) terms.push_back(*penalty);
  if (terms.empty()) throw ValidationError("total loss needs at least one term");
  ad::Var total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
  return total;
}

}  // namespace adareg::loss
