#pragma once

#include <string>

#include "srdml/autodiff.hpp"

namespace srdml {

enum class LossKind { Mse, Bce };

std::string to_string(LossKind k);
LossKind parse_loss_kind(const std::string& s);

/// Mean squared error of raw outputs against targets, both [n,1].
ad::Var mse_loss(ad::Var predictions, ad::Var targets);
/// Mean sigmoid cross-entropy on logits, softplus(z) - y z, stable for any z.
ad::Var bce_loss(ad::Var logits, ad::Var targets);
ad::Var task_loss(LossKind kind, ad::Var outputs, ad::Var targets);

/// Per-sample loss on plain numbers, matching the tape versions.
double sample_loss(LossKind kind, double output, double target);

}  // namespace srdml
