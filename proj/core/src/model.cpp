#include "hbnn/model.hpp"

namespace hbnn {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

// Input and output widths of a layer. A head maps [mean, raw scale] to one target.
std::pair<Index, Index> widths(const Layer& layer) {
  return std::visit(overloaded{
                        [](const DenseLayer& l) { return std::pair{l.input_dim(), l.output_dim()}; },
                        [](const VariationalDenseLayer& l) {
                          return std::pair{l.input_dim(), l.output_dim()};
                        },
                        [](const GPLayer& l) { return std::pair{l.input_dim(), l.num_latent()}; },
                        [](const GaussianHead&) { return std::pair<Index, Index>{2, 1}; },
                    },
                    layer);
}

}  // namespace

std::string_view loss_name(LossKind loss) {
  switch (loss) {
    case LossKind::mse: return "mse";
    case LossKind::nll: return "nll";
    case LossKind::elbo: return "elbo";
  }
  return "unknown";
}

Model::Model(std::vector<Layer> layers, LossKind loss, std::size_t num_train,
             std::optional<GaussianLikelihood> likelihood)
    : layers_(std::move(layers)), loss_(loss), num_train_(num_train), likelihood_(std::move(likelihood)) {
  validate();
  assign_names();
}

void Model::validate() const {
  if (layers_.empty()) throw ModelError("model has no layers");
  if (num_train_ == 0) throw ModelError("model needs num_train >= 1");
  for (std::size_t i = 1; i < layers_.size(); ++i) {
    const Index out = widths(layers_[i - 1]).second;
    const Index in = widths(layers_[i]).first;
    if (out != in) {
      throw ModelError("layer " + std::to_string(i) + " expects width " + std::to_string(in) +
                       " but layer " + std::to_string(i - 1) + " produces " + std::to_string(out));
    }
  }
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
    if (std::holds_alternative<GaussianHead>(layers_[i])) throw ModelError("GaussianHead must be the last layer");
  }
  const Layer& last = layers_.back();
  switch (loss_) {
    case LossKind::elbo: {
      const auto* gp = std::get_if<GPLayer>(&last);
      if (gp == nullptr) throw ModelError("loss elbo requires a GP layer as the last layer");
      if (gp->num_latent() != 1) throw ModelError("loss elbo requires a single-output terminal GP layer");
      if (!likelihood_) throw ModelError("loss elbo requires a GaussianLikelihood");
      break;
    }
    case LossKind::nll:
      if (!std::holds_alternative<GaussianHead>(last)) throw ModelError("loss nll requires a GaussianHead terminal");
      if (likelihood_) throw ModelError("loss nll does not take a GaussianLikelihood");
      break;
    case LossKind::mse:
      if (!std::holds_alternative<DenseLayer>(last)) {
        throw ModelError("loss mse requires a deterministic dense terminal layer");
      }
      if (likelihood_) throw ModelError("loss mse does not take a GaussianLikelihood");
      break;
  }
}

void Model::assign_names() {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string prefix = "layer" + std::to_string(i) + ".";
    std::visit(overloaded{
                   [&](DenseLayer& l) { l.set_name_prefix(prefix); },
                   [&](VariationalDenseLayer& l) { l.set_name_prefix(prefix); },
                   [&](GPLayer& l) { l.set_name_prefix(prefix); },
                   [](GaussianHead&) {},
               },
               layers_[i]);
  }
  if (likelihood_) likelihood_->set_name_prefix("likelihood.");
}

Index Model::input_dim() const { return widths(layers_.front()).first; }

bool Model::has_stochastic_hidden_layers() const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (std::holds_alternative<VariationalDenseLayer>(layers_[i])) return true;
    if (std::holds_alternative<GPLayer>(layers_[i]) && i + 1 < layers_.size()) return true;
  }
  return false;
}

bool Model::has_noise_model() const { return likelihood_.has_value() || loss_ == LossKind::nll; }

std::size_t Model::num_gp_layers() const {
  std::size_t n = 0;
  for (const Layer& l : layers_) n += std::holds_alternative<GPLayer>(l) ? 1 : 0;
  return n;
}

ForwardOutput Model::forward(Var x, Rng& rng, ForwardMode mode) {
  if (x.cols() != input_dim()) {
    throw DimensionMismatch("model input has " + std::to_string(x.cols()) + " columns, expected " +
                            std::to_string(input_dim()));
  }
  Var h = x;
  const bool sample = mode == ForwardMode::sample;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const bool last = i + 1 == layers_.size();
    if (auto* dense = std::get_if<DenseLayer>(&layers_[i])) {
      h = dense->forward(h);
    } else if (auto* vdense = std::get_if<VariationalDenseLayer>(&layers_[i])) {
      h = sample ? vdense->forward_sample(h, rng) : vdense->forward_mean(h);
    } else if (auto* gp = std::get_if<GPLayer>(&layers_[i])) {
      if (last) {
        MarginalVars m = gp->predict_marginals(h);
        return ForwardOutput{m.mean, m.variance};
      }
      h = sample ? gp->sample(h, rng) : gp->predict_marginals(h).mean;
    }
    // GaussianHead passes its raw input through; decoding happens in the
    // loss and in predict.
  }
  return ForwardOutput{h, std::nullopt};
}

ParameterList Model::parameters() {
  ParameterList out;
  for (Layer& layer : layers_) {
    std::visit(overloaded{
                   [&](DenseLayer& l) { for (Parameter* p : l.parameters()) out.push_back(p); },
                   [&](VariationalDenseLayer& l) { for (Parameter* p : l.parameters()) out.push_back(p); },
                   [&](GPLayer& l) { for (Parameter* p : l.parameters()) out.push_back(p); },
                   [](GaussianHead&) {},
               },
               layer);
  }
  if (likelihood_) out.push_back(&likelihood_->variance_parameter());
  return out;
}

}  // namespace hbnn
