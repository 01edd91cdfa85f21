#include "srdml/loss.hpp"

#include <stdexcept>

#include "srdml/kernels.hpp"

namespace srdml {

std::string to_string(LossKind k) { return k == LossKind::Mse ? "mse" : "bce"; }

LossKind parse_loss_kind(const std::string& s) {
  if (s == "mse") return LossKind::Mse;
  if (s == "bce") return LossKind::Bce;
  throw std::invalid_argument("unknown loss '" + s + "'");
}

ad::Var mse_loss(ad::Var predictions, ad::Var targets) {
  if (predictions.shape() != targets.shape()) {
    throw ShapeError("mse_loss: " + shape_to_string(predictions.shape()) + " vs " + shape_to_string(targets.shape()));
  }
  return ad::mean(ad::square(ad::sub(predictions, targets)));
}

ad::Var bce_loss(ad::Var logits, ad::Var targets) {
  if (logits.shape() != targets.shape()) {
    throw ShapeError("bce_loss: " + shape_to_string(logits.shape()) + " vs " + shape_to_string(targets.shape()));
  }
  return ad::mean(ad::sub(ad::softplus(logits), ad::mul(targets, logits)));
}

ad::Var task_loss(LossKind kind, ad::Var outputs, ad::Var targets) {
  return kind == LossKind::Mse ? mse_loss(outputs, targets) : bce_loss(outputs, targets);
}

double sample_loss(LossKind kind, double output, double target) {
  if (kind == LossKind::Mse) return (output - target) * (output - target);
  return kernels::apply_unary(kernels::UnaryOp::Softplus, output) - target * output;
}

}  // namespace srdml
