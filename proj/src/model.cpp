#include "srdml/model.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "srdml/json_fields.hpp"
#include "srdml/rng.hpp"

namespace srdml {

using nlohmann::json;

void ModelSpec::validate() const {
  if (num_tasks < 2) throw std::invalid_argument("model: num_tasks must be at least 2");
  if (input_dim == 0) throw std::invalid_argument("model: input_dim must be positive");
  if (feature_dim == 0) throw std::invalid_argument("model: feature_dim must be positive");
  if (trunk == TrunkKind::Identity && feature_dim != input_dim) {
    throw std::invalid_argument("model: identity trunk requires feature_dim == input_dim");
  }
  if (trunk != TrunkKind::Mlp && !trunk_widths.empty()) {
    throw std::invalid_argument("model: trunk_widths only apply to an mlp trunk");
  }
  if (head != HeadKind::Mlp && !head_widths.empty()) {
    throw std::invalid_argument("model: head_widths only apply to an mlp head");
  }
  for (auto w : trunk_widths) {
    if (w == 0) throw std::invalid_argument("model: trunk widths must be at least 1");
  }
  for (auto w : head_widths) {
    if (w == 0) throw std::invalid_argument("model: head widths must be at least 1");
  }
}

namespace {

Dense make_dense(std::size_t in, std::size_t out, bool with_bias, Rng rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor w = Tensor::zeros({in, out});
  for (auto& v : w.storage()) v = rng.uniform(-limit, limit);
  Dense d{std::move(w), std::nullopt};
  if (with_bias) d.bias = Tensor::zeros({1, out});
  return d;
}

std::vector<std::size_t> layer_sizes(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

ad::Var activate(Activation a, ad::Var x) {
  switch (a) {
    case Activation::Tanh: return ad::tanh(x);
    case Activation::Sigmoid: return ad::sigmoid(x);
    case Activation::Softplus: return ad::softplus(x);
  }
  return x;
}

ad::Var dense_forward(const DenseVars& layer, ad::Var x) {
  ad::Var y = ad::matmul(x, layer.weight);
  if (layer.bias) {
    const auto n = x.value().rows();
    y = ad::add(y, ad::matmul(x.tape().constant(Tensor::filled({n, 1}, 1.0)), *layer.bias));
  }
  return y;
}

/// Layers with the activation between them and none after the last.
ad::Var stack_forward(const std::vector<DenseVars>& layers, Activation act, ad::Var x) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = dense_forward(layers[i], x);
    if (i + 1 < layers.size()) x = activate(act, x);
  }
  return x;
}

std::vector<DenseVars> bind_layers(ad::Tape& tape, const Layers& layers, bool requires_grad) {
  std::vector<DenseVars> out;
  for (const auto& l : layers) {
    DenseVars dv{tape.leaf(l.weight, requires_grad), std::nullopt};
    if (l.bias) dv.bias = tape.leaf(*l.bias, requires_grad);
    out.push_back(dv);
  }
  return out;
}

}  // namespace

MultiTaskModel init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  const Rng root(seed);
  std::uint64_t stream = 0;
  MultiTaskModel m;
  m.spec = spec;
  Layers trunk;
  switch (spec.trunk) {
    case TrunkKind::Identity: break;
    case TrunkKind::Affine: trunk.push_back(make_dense(spec.input_dim, spec.feature_dim, true, root.split(stream++))); break;
    case TrunkKind::Mlp: {
      const auto sizes = layer_sizes(spec.input_dim, spec.trunk_widths, spec.feature_dim);
      for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
        trunk.push_back(make_dense(sizes[i], sizes[i + 1], true, root.split(stream++)));
      }
      break;
    }
  }
  m.trunks.push_back(std::move(trunk));
  const auto head_sizes =
      layer_sizes(spec.feature_dim, spec.head == HeadKind::Mlp ? spec.head_widths : std::vector<std::size_t>{}, 1);
  stream = 1000;
  for (std::size_t t = 0; t < spec.num_tasks; ++t) {
    Layers head;
    for (std::size_t i = 0; i + 1 < head_sizes.size(); ++i) {
      head.push_back(make_dense(head_sizes[i], head_sizes[i + 1], spec.head_bias, root.split(stream++)));
    }
    m.heads.push_back(std::move(head));
  }
  return m;
}

MultiTaskModel replicate_trunk(MultiTaskModel model) {
  if (model.shared_trunk()) {
    const Layers shared = model.trunks.front();
    model.trunks.assign(model.spec.num_tasks, shared);
  }
  return model;
}

std::vector<ad::Var> BoundModel::parameters() const {
  std::vector<ad::Var> out;
  auto collect = [&](const std::vector<std::vector<DenseVars>>& groups) {
    for (const auto& layers : groups)
      for (const auto& l : layers) {
        out.push_back(l.weight);
        if (l.bias) out.push_back(*l.bias);
      }
  };
  collect(trunks);
  collect(heads);
  return out;
}

BoundModel bind(ad::Tape& tape, const MultiTaskModel& model, bool requires_grad) {
  BoundModel b;
  b.spec = &model.spec;
  for (const auto& t : model.trunks) b.trunks.push_back(bind_layers(tape, t, requires_grad));
  for (const auto& h : model.heads) b.heads.push_back(bind_layers(tape, h, requires_grad));
  return b;
}

std::vector<Tensor*> parameter_tensors(MultiTaskModel& model) {
  std::vector<Tensor*> out;
  auto collect = [&](std::vector<Layers>& groups) {
    for (auto& layers : groups)
      for (auto& l : layers) {
        out.push_back(&l.weight);
        if (l.bias) out.push_back(&*l.bias);
      }
  };
  collect(model.trunks);
  collect(model.heads);
  return out;
}

ad::Var trunk_forward(const BoundModel& model, ad::Var x, std::size_t task) {
  if (x.value().rank() != 2 || x.value().cols() != model.spec->input_dim) {
    throw ShapeError("trunk_forward: expected [n," + std::to_string(model.spec->input_dim) + "] input, got " +
                     shape_to_string(x.shape()));
  }
  return stack_forward(model.trunk_for(task), model.spec->activation, x);
}

ad::Var head_forward(const BoundModel& model, std::size_t task, ad::Var features) {
  if (task >= model.heads.size()) {
    throw std::invalid_argument("head_forward: task index " + std::to_string(task) + " out of range");
  }
  if (features.value().rank() != 2 || features.value().cols() != model.spec->feature_dim) {
    throw ShapeError("head_forward: expected [n," + std::to_string(model.spec->feature_dim) + "] features, got " +
                     shape_to_string(features.shape()));
  }
  return stack_forward(model.heads[task], model.spec->activation, features);
}

ad::Var input_saliency(const BoundModel& model, std::size_t task, ad::Var features, bool higher_order) {
  return ad::gradient(ad::sum(head_forward(model, task, features)), features, higher_order);
}

Tensor trunk_forward(const MultiTaskModel& model, const Tensor& x, std::size_t task) {
  ad::Tape tape;
  auto b = bind(tape, model, false);
  return trunk_forward(b, tape.constant(x), task).value();
}

Tensor head_forward(const MultiTaskModel& model, std::size_t task, const Tensor& features) {
  ad::Tape tape;
  auto b = bind(tape, model, false);
  return head_forward(b, task, tape.constant(features)).value();
}

Tensor predict(const MultiTaskModel& model, std::size_t task, const Tensor& x) {
  ad::Tape tape;
  auto b = bind(tape, model, false);
  return head_forward(b, task, trunk_forward(b, tape.constant(x), task)).value();
}

Tensor input_saliency(const MultiTaskModel& model, std::size_t task, const Tensor& features) {
  ad::Tape tape;
  auto b = bind(tape, model, false);
  return input_saliency(b, task, tape.leaf(features, true), false).value();
}

// ---------------------------------------------------------------------------
// Names and JSON

std::string to_string(TrunkKind k) {
  switch (k) {
    case TrunkKind::Identity: return "identity";
    case TrunkKind::Affine: return "affine";
    case TrunkKind::Mlp: return "mlp";
  }
  return "?";
}

std::string to_string(HeadKind k) { return k == HeadKind::Linear ? "linear" : "mlp"; }

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Softplus: return "softplus";
  }
  return "?";
}

std::string to_string(TaskKind k) { return k == TaskKind::Regression ? "regression" : "binary_classification"; }

TrunkKind parse_trunk_kind(const std::string& s) {
  if (s == "identity") return TrunkKind::Identity;
  if (s == "affine") return TrunkKind::Affine;
  if (s == "mlp") return TrunkKind::Mlp;
  throw std::invalid_argument("unknown trunk kind '" + s + "'");
}

HeadKind parse_head_kind(const std::string& s) {
  if (s == "linear") return HeadKind::Linear;
  if (s == "mlp") return HeadKind::Mlp;
  throw std::invalid_argument("unknown head kind '" + s + "'");
}

Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "softplus") return Activation::Softplus;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

TaskKind parse_task_kind(const std::string& s) {
  if (s == "regression") return TaskKind::Regression;
  if (s == "binary_classification") return TaskKind::BinaryClassification;
  throw std::invalid_argument("unknown task kind '" + s + "'");
}

void to_json(json& j, const ModelSpec& s) {
  j = json{{"input_dim", s.input_dim},   {"trunk", to_string(s.trunk)},
           {"trunk_widths", s.trunk_widths}, {"feature_dim", s.feature_dim},
           {"head", to_string(s.head)},   {"head_widths", s.head_widths},
           {"activation", to_string(s.activation)}, {"num_tasks", s.num_tasks},
           {"task_kind", to_string(s.task_kind)}, {"head_bias", s.head_bias}};
}

void from_json(const json& j, ModelSpec& s) {
  FieldReader r(j, "");
  r.optional("input_dim", s.input_dim);
  std::string trunk = to_string(s.trunk), head = to_string(s.head), act = to_string(s.activation),
              kind = to_string(s.task_kind);
  r.optional("trunk", trunk);
  r.optional("trunk_widths", s.trunk_widths);
  r.optional("feature_dim", s.feature_dim);
  r.optional("head", head);
  r.optional("head_widths", s.head_widths);
  r.optional("activation", act);
  r.optional("num_tasks", s.num_tasks);
  r.optional("task_kind", kind);
  r.optional("head_bias", s.head_bias);
  r.finish();
  auto parse = [&](const char* key, auto fn, const std::string& v) {
    try {
      return fn(v);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(key, e.what());
    }
  };
  s.trunk = parse("trunk", parse_trunk_kind, trunk);
  s.head = parse("head", parse_head_kind, head);
  s.activation = parse("activation", parse_activation, act);
  s.task_kind = parse("task_kind", parse_task_kind, kind);
}

namespace {

json tensor_json(const Tensor& t) { return json{{"shape", t.shape()}, {"data", t.storage()}}; }

Tensor tensor_from(const json& j, const std::string& name) {
  try {
    return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
  } catch (const std::exception& e) {
    throw std::invalid_argument("model parameter '" + name + "': " + e.what());
  }
}

void put_layers(json& params, const std::string& prefix, const Layers& layers) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto base = prefix + "." + std::to_string(l);
    params[base + ".weight"] = tensor_json(layers[l].weight);
    if (layers[l].bias) params[base + ".bias"] = tensor_json(*layers[l].bias);
  }
}

void take_layers(const json& params, const std::string& prefix, Layers& layers) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto base = prefix + "." + std::to_string(l);
    auto load = [&](const std::string& key, Tensor& into) {
      if (!params.contains(key)) throw std::invalid_argument("model JSON lacks parameter '" + key + "'");
      Tensor t = tensor_from(params.at(key), key);
      if (t.shape() != into.shape()) throw ShapeError("model parameter '" + key + "' has wrong shape");
      into = std::move(t);
    };
    load(base + ".weight", layers[l].weight);
    if (layers[l].bias) load(base + ".bias", *layers[l].bias);
  }
}

}  // namespace

json model_to_json(const MultiTaskModel& model) {
  json params = json::object();
  for (std::size_t r = 0; r < model.trunks.size(); ++r) put_layers(params, "trunk." + std::to_string(r), model.trunks[r]);
  for (std::size_t t = 0; t < model.heads.size(); ++t) put_layers(params, "head." + std::to_string(t), model.heads[t]);
  return json{{"spec", model.spec}, {"shared_trunk", model.shared_trunk()}, {"params", params}};
}

MultiTaskModel model_from_json(const json& j) {
  const auto spec = j.at("spec").get<ModelSpec>();
  MultiTaskModel m = init_params(spec, 0);
  if (!j.at("shared_trunk").get<bool>()) m = replicate_trunk(std::move(m));
  const auto& params = j.at("params");
  for (std::size_t r = 0; r < m.trunks.size(); ++r) take_layers(params, "trunk." + std::to_string(r), m.trunks[r]);
  for (std::size_t t = 0; t < m.heads.size(); ++t) take_layers(params, "head." + std::to_string(t), m.heads[t]);
  return m;
}

void save_model(const MultiTaskModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << model_to_json(model).dump(1) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

MultiTaskModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return model_from_json(json::parse(in));
}

}  // namespace srdml
