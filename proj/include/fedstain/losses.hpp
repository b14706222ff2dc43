#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "fedstain/nn.hpp"

namespace fedstain {

enum class ClsLoss { CrossEntropy, SupConSelf };
std::string_view to_string(ClsLoss c);
ClsLoss parse_cls_loss(std::string_view s);

struct LossWeights {
  double alpha = 1.0;  // weight of the representation alignment term
  double beta = 1.0;   // weight of the prediction alignment term
  double tau = 0.1;    // SupCon temperature
  ClsLoss cls_loss = ClsLoss::CrossEntropy;

  void validate() const;
};

struct LossBreakdown {
  double cls = 0.0;
  double ra = 0.0;
  double js = 0.0;
  double total = 0.0;
};

// Every loss takes column-per-sample matrices and, when a gradient pointer
// is given, writes dLoss/dInput with the same shape.

/// Mean negative log-likelihood of the true class, from logits.
double cross_entropy(const Matrix& logits, std::span<const int> labels,
                     Matrix* grad_logits = nullptr);

/// Supervised contrastive loss with cosine similarity. Anchor i is compared
/// with bank entries a != i; positives are bank entries sharing its label.
/// Anchors without positives are skipped; the result averages the rest.
double supcon(const Matrix& anchors, const Matrix& bank, std::span<const int> labels, double tau,
              Matrix* grad_anchors = nullptr, Matrix* grad_bank = nullptr);

/// Mean of supcon(z, v) over the three augmented views v.
double representation_alignment(const Matrix& z, const Matrix& z_stain, const Matrix& z1,
                                 const Matrix& z2, std::span<const int> labels, double tau,
                                 Matrix* grad_z = nullptr, Matrix* grad_stain = nullptr,
                                 Matrix* grad_z1 = nullptr, Matrix* grad_z2 = nullptr);

/// Mean over samples of (1/M) sum_i KL(p_i || mean_j p_j), natural log, from
/// M logit matrices.
double js_alignment(std::span<const Matrix> logits, std::vector<Matrix>* grad_logits = nullptr);
/// Same quantity directly on probability columns (no gradient).
double js_alignment_probs(std::span<const Matrix> probs);

LossBreakdown total_loss(double cls, double ra, double js, const LossWeights& w);

}  // namespace fedstain
