#include "ciim/forecaster.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ciim/errors.hpp"
#include "ciim/rng.hpp"

namespace ciim {

namespace {

constexpr int kIo = static_cast<int>(kChannelCount);

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Eigen::VectorXd to_vector(const Observation& obs) {
  return Eigen::Map<const Eigen::VectorXd>(obs.data(), kIo);
}

bool legal(std::size_t channel, double v) {
  if (!std::isfinite(v)) return false;
  if (channel == static_cast<std::size_t>(Channel::kResilience)) return v > 0.0 && v <= 1.0;
  return v >= 0.0 && v <= 1.0;
}

// Per-step activations kept for backpropagation.
struct StepCache {
  Eigen::VectorXd x, h_prev, z, r, h_tilde, h;
};

StepCache forward_step(const GruParams& p, const Eigen::VectorXd& h_prev, const Eigen::VectorXd& x) {
  StepCache c;
  c.x = x;
  c.h_prev = h_prev;
  c.z = (p.w_z * x + p.u_z * h_prev + p.b_z).unaryExpr(&sigmoid);
  c.r = (p.w_r * x + p.u_r * h_prev + p.b_r).unaryExpr(&sigmoid);
  const Eigen::VectorXd gated = c.r.cwiseProduct(h_prev);
  c.h_tilde = (p.w_h * x + p.u_h * gated + p.b_h).array().tanh().matrix();
  c.h = (Eigen::VectorXd::Ones(p.hidden_size) - c.z).cwiseProduct(h_prev) + c.z.cwiseProduct(c.h_tilde);
  return c;
}

void require_trainable(const SeriesWindow& history) {
  if (history.length() < 2) throw std::invalid_argument("one-step loss needs at least 2 observations");
}

}  // namespace

Observation observation_of(const RiskState& s) {
  return {s.threat,         s.vulnerability,  s.exposure,       s.resilience,
          s.sources.d_hist, s.sources.d_real, s.sources.b_user, s.sources.a_patterns};
}

RiskState state_of(const Observation& o, std::uint64_t tick) {
  RiskState s;
  s.t = tick;
  s.threat = o[0];
  s.vulnerability = o[1];
  s.exposure = o[2];
  s.resilience = o[3];
  s.sources = {o[4], o[5], o[6], o[7]};
  return s;
}

Observation clamp_to_legal(Observation obs, double resilience_floor) {
  for (std::size_t i = 0; i < kChannelCount; ++i) {
    const double lo = i == static_cast<std::size_t>(Channel::kResilience) ? resilience_floor : 0.0;
    // NaN collapses to the lower bound.
    obs[i] = std::isnan(obs[i]) ? lo : std::clamp(obs[i], lo, 1.0);
  }
  return obs;
}

SeriesWindow::SeriesWindow(std::vector<Observation> rows) : rows_(std::move(rows)) {
  for (const auto& row : rows_) {
    for (std::size_t i = 0; i < kChannelCount; ++i) {
      if (!legal(i, row[i])) {
        throw DomainError("series value out of range on channel " + std::string(kChannelNames[i]));
      }
    }
  }
}

SeriesWindow SeriesWindow::from_states(std::span<const RiskState> states) {
  std::vector<Observation> rows;
  rows.reserve(states.size());
  for (const auto& s : states) rows.push_back(observation_of(s));
  return SeriesWindow(std::move(rows));
}

// ---------------------------------------------------------------- GRU params

GruParams GruParams::zeros(int hidden_size) {
  if (hidden_size <= 0) throw std::invalid_argument("hidden_size must be positive");
  GruParams p;
  p.hidden_size = hidden_size;
  const int h = hidden_size;
  p.w_z = p.w_r = p.w_h = Eigen::MatrixXd::Zero(h, kIo);
  p.u_z = p.u_r = p.u_h = Eigen::MatrixXd::Zero(h, h);
  p.b_z = p.b_r = p.b_h = Eigen::MatrixXd::Zero(h, 1);
  p.w_y = Eigen::MatrixXd::Zero(kIo, h);
  p.b_y = Eigen::MatrixXd::Zero(kIo, 1);
  return p;
}

GruParams GruParams::seeded(std::uint64_t seed, int hidden_size, double scale) {
  GruParams p = zeros(hidden_size);
  Rng rng(seed);
  p.visit([&](std::string_view, Eigen::MatrixXd& m) {
    // Row-major fill so the draw order matches the serialized layout.
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-scale, scale);
  });
  return p;
}

void GruParams::add_scaled(const GruParams& o, double s) {
  if (o.hidden_size != hidden_size) throw std::invalid_argument("hidden size mismatch");
  w_z += s * o.w_z; u_z += s * o.u_z; b_z += s * o.b_z;
  w_r += s * o.w_r; u_r += s * o.u_r; b_r += s * o.b_r;
  w_h += s * o.w_h; u_h += s * o.u_h; b_h += s * o.b_h;
  w_y += s * o.w_y; b_y += s * o.b_y;
}

std::size_t GruParams::parameter_count() const {
  std::size_t n = 0;
  visit([&](std::string_view, const Eigen::MatrixXd& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

void GruParams::check_shapes() const {
  const int h = hidden_size;
  if (h <= 0) throw std::invalid_argument("hidden_size must be positive");
  auto expect = [](const Eigen::MatrixXd& m, int rows, int cols, std::string_view name) {
    if (m.rows() != rows || m.cols() != cols) {
      throw std::invalid_argument("tensor " + std::string(name) + " has wrong shape");
    }
  };
  expect(w_z, h, kIo, "w_z"); expect(u_z, h, h, "u_z"); expect(b_z, h, 1, "b_z");
  expect(w_r, h, kIo, "w_r"); expect(u_r, h, h, "u_r"); expect(b_r, h, 1, "b_r");
  expect(w_h, h, kIo, "w_h"); expect(u_h, h, h, "u_h"); expect(b_h, h, 1, "b_h");
  expect(w_y, kIo, h, "w_y"); expect(b_y, kIo, 1, "b_y");
}

bool GruParams::operator==(const GruParams& other) const {
  if (hidden_size != other.hidden_size) return false;
  return w_z == other.w_z && u_z == other.u_z && b_z == other.b_z && w_r == other.w_r &&
         u_r == other.u_r && b_r == other.b_r && w_h == other.w_h && u_h == other.u_h &&
         b_h == other.b_h && w_y == other.w_y && b_y == other.b_y;
}

// ---------------------------------------------------------------- GRU math

Eigen::VectorXd gru_step(const GruParams& params, const Eigen::VectorXd& hidden,
                         std::span<const double> input) {
  params.check_shapes();
  if (hidden.size() != params.hidden_size) throw std::invalid_argument("hidden state has wrong size");
  if (input.size() != kChannelCount) throw std::invalid_argument("input must have 8 channels");
  const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(input.data(), kIo);
  return forward_step(params, hidden, x).h;
}

double one_step_loss(const GruParams& params, const SeriesWindow& history) {
  params.check_shapes();
  require_trainable(history);
  const std::size_t steps = history.length() - 1;
  Eigen::VectorXd h = Eigen::VectorXd::Zero(params.hidden_size);
  double sum = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    h = forward_step(params, h, to_vector(history.at(t))).h;
    const Eigen::VectorXd y = params.w_y * h + params.b_y;
    sum += (y - to_vector(history.at(t + 1))).squaredNorm();
  }
  return sum / static_cast<double>(steps * kChannelCount);
}

double one_step_loss_and_gradient(const GruParams& params, const SeriesWindow& history,
                                  GruParams& grad) {
  params.check_shapes();
  require_trainable(history);
  const std::size_t steps = history.length() - 1;
  const double norm = static_cast<double>(steps * kChannelCount);

  std::vector<StepCache> caches;
  std::vector<Eigen::VectorXd> dy(steps);
  caches.reserve(steps);
  Eigen::VectorXd h = Eigen::VectorXd::Zero(params.hidden_size);
  double sum = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    caches.push_back(forward_step(params, h, to_vector(history.at(t))));
    h = caches.back().h;
    const Eigen::VectorXd err = params.w_y * h + params.b_y - to_vector(history.at(t + 1));
    sum += err.squaredNorm();
    dy[t] = 2.0 * err / norm;
  }

  grad = GruParams::zeros(params.hidden_size);
  Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(params.hidden_size);
  for (std::size_t k = steps; k-- > 0;) {
    const StepCache& c = caches[k];
    grad.w_y += dy[k] * c.h.transpose();
    grad.b_y += dy[k];
    const Eigen::VectorXd dh = params.w_y.transpose() * dy[k] + dh_next;

    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(params.hidden_size);
    const Eigen::VectorXd dz = dh.cwiseProduct(c.h_tilde - c.h_prev);
    const Eigen::VectorXd da_z = dz.cwiseProduct(c.z.cwiseProduct(ones - c.z));
    const Eigen::VectorXd da_h =
        dh.cwiseProduct(c.z).cwiseProduct(ones - c.h_tilde.cwiseProduct(c.h_tilde));
    const Eigen::VectorXd gated = c.r.cwiseProduct(c.h_prev);
    const Eigen::VectorXd d_gated = params.u_h.transpose() * da_h;
    const Eigen::VectorXd da_r = d_gated.cwiseProduct(c.h_prev).cwiseProduct(c.r.cwiseProduct(ones - c.r));

    grad.w_z += da_z * c.x.transpose();
    grad.u_z += da_z * c.h_prev.transpose();
    grad.b_z += da_z;
    grad.w_r += da_r * c.x.transpose();
    grad.u_r += da_r * c.h_prev.transpose();
    grad.b_r += da_r;
    grad.w_h += da_h * c.x.transpose();
    grad.u_h += da_h * gated.transpose();
    grad.b_h += da_h;

    dh_next = dh.cwiseProduct(ones - c.z) + d_gated.cwiseProduct(c.r) +
              params.u_z.transpose() * da_z + params.u_r.transpose() * da_r;
  }
  return sum / norm;
}

TrainResult train_forecaster(const SeriesWindow& history, const TrainConfig& config) {
  if (history.length() < 3) throw std::invalid_argument("training needs a history of at least 3 ticks");
  if (config.epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (!(config.learning_rate > 0.0) || !std::isfinite(config.learning_rate)) {
    throw std::invalid_argument("learning rate must be positive");
  }

  TrainResult result;
  GruParams current = GruParams::seeded(config.seed, config.hidden_size);
  result.params = current;
  result.initial_loss = one_step_loss(current, history);
  result.final_loss = result.initial_loss;

  GruParams grad;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double loss = one_step_loss_and_gradient(current, history, grad);
    if (loss < result.final_loss) {
      result.final_loss = loss;
      result.params = current;
    }
    current.add_scaled(grad, -config.learning_rate);
  }
  if (config.epochs > 0) {
    const double loss = one_step_loss(current, history);
    if (loss < result.final_loss) {
      result.final_loss = loss;
      result.params = std::move(current);
    }
  }
  return result;
}

// ---------------------------------------------------------------- AR(1)

Ar1Model fit_ar1(const SeriesWindow& history) {
  Ar1Model model;
  if (history.length() < 3) return model;
  const std::size_t n = history.length() - 1;
  for (std::size_t ch = 0; ch < kChannelCount; ++ch) {
    double mx = 0.0, my = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      mx += history.at(t)[ch];
      my += history.at(t + 1)[ch];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double dx = history.at(t)[ch] - mx;
      sxx += dx * dx;
      sxy += dx * (history.at(t + 1)[ch] - my);
    }
    if (sxx <= 1e-12) continue;
    model.phi[ch] = sxy / sxx;
    model.c[ch] = my - model.phi[ch] * mx;
  }
  return model;
}

std::string_view to_string(ModelId id) { return id == ModelId::kGru ? "GRU" : "AR1"; }

Forecast forecast_next(const GruParams& params, const SeriesWindow& history, double resilience_floor) {
  params.check_shapes();
  if (history.empty()) throw std::invalid_argument("cannot forecast from an empty history");
  Eigen::VectorXd h = Eigen::VectorXd::Zero(params.hidden_size);
  for (const auto& row : history.rows()) h = forward_step(params, h, to_vector(row)).h;
  const Eigen::VectorXd y = params.w_y * h + params.b_y;
  Observation raw{};
  for (int i = 0; i < kIo; ++i) raw[static_cast<std::size_t>(i)] = y(i);
  return {clamp_to_legal(raw, resilience_floor), ModelId::kGru};
}

Forecast forecast_next(const Ar1Model& model, const SeriesWindow& history, double resilience_floor) {
  if (history.empty()) throw std::invalid_argument("cannot forecast from an empty history");
  Observation raw{};
  const Observation& last = history.back();
  for (std::size_t i = 0; i < kChannelCount; ++i) raw[i] = model.phi[i] * last[i] + model.c[i];
  return {clamp_to_legal(raw, resilience_floor), ModelId::kAr1};
}

// ---------------------------------------------------------------- JSON

Json to_json(const GruParams& params) {
  Json j = Json::object();
  j["format"] = "ciim.gru";
  j["version"] = kModelFormatVersion;
  j["hidden_size"] = params.hidden_size;
  j["channels"] = kChannelCount;
  Json tensors = Json::array();
  params.visit([&](std::string_view name, const Eigen::MatrixXd& m) {
    Json t = Json::object();
    t["name"] = name;
    t["rows"] = m.rows();
    t["cols"] = m.cols();
    Json data = Json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    t["data"] = std::move(data);
    tensors.push_back(std::move(t));
  });
  j["tensors"] = std::move(tensors);
  return j;
}

GruParams gru_params_from_json(const Json& j, const std::string& path) {
  json_io::require_object(j, path);
  if (json_io::string_or(j, "format", "", path) != "ciim.gru") {
    throw ConfigError("not a GRU model document", json_io::join(path, "format"));
  }
  if (json_io::unsigned_or(j, "version", 0, path) != kModelFormatVersion) {
    throw ConfigError("unsupported model version", json_io::join(path, "version"));
  }
  const auto hidden = json_io::unsigned_or(j, "hidden_size", 0, path);
  if (hidden == 0 || hidden > 4096) throw ConfigError("invalid hidden_size", json_io::join(path, "hidden_size"));
  GruParams p = GruParams::zeros(static_cast<int>(hidden));
  const Json& tensors = json_io::require(j, "tensors", path);
  const std::string tpath = json_io::join(path, "tensors");
  if (!tensors.is_array()) throw ConfigError("expected an array", tpath);
  std::size_t index = 0;
  p.visit([&](std::string_view name, Eigen::MatrixXd& m) {
    const std::string ipath = tpath + "[" + std::to_string(index) + "]";
    if (index >= tensors.size()) throw ConfigError("missing tensor " + std::string(name), ipath);
    const Json& t = tensors[index++];
    if (json_io::string_or(t, "name", "", ipath) != name) throw ConfigError("unexpected tensor", ipath);
    const Json& data = json_io::require(t, "data", ipath);
    if (json_io::unsigned_or(t, "rows", 0, ipath) != static_cast<std::uint64_t>(m.rows()) ||
        json_io::unsigned_or(t, "cols", 0, ipath) != static_cast<std::uint64_t>(m.cols()) ||
        !data.is_array() || data.size() != static_cast<std::size_t>(m.size())) {
      throw ConfigError("tensor shape mismatch", ipath);
    }
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const Json& v = data[k++];
        if (!v.is_number()) throw ConfigError("expected a number", ipath + ".data");
        m(r, c) = v.get<double>();
      }
    }
  });
  return p;
}

Json to_json(const Ar1Model& model) {
  Json j = Json::object();
  j["model"] = "ar1";
  j["phi"] = Json::array();
  j["c"] = Json::array();
  for (double v : model.phi) j["phi"].push_back(v);
  for (double v : model.c) j["c"].push_back(v);
  return j;
}

Ar1Model ar1_from_json(const Json& j, const std::string& path) {
  json_io::require_object(j, path);
  Ar1Model m;
  auto read = [&](std::string_view key, Observation& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    const std::string p = json_io::join(path, key);
    if (it->is_number()) {
      out.fill(it->get<double>());
      return;
    }
    if (!it->is_array() || it->size() != kChannelCount) throw ConfigError("expected a number or 8 numbers", p);
    for (std::size_t i = 0; i < kChannelCount; ++i) {
      if (!(*it)[i].is_number()) throw ConfigError("expected a number", p);
      out[i] = (*it)[i].get<double>();
    }
  };
  read("phi", m.phi);
  read("c", m.c);
  for (std::size_t i = 0; i < kChannelCount; ++i) {
    if (!std::isfinite(m.phi[i]) || !std::isfinite(m.c[i])) throw ConfigError("coefficients must be finite", path);
  }
  return m;
}

Json to_json(const Forecast& forecast, std::uint64_t tick) {
  Json j = Json::object();
  j["model"] = to_string(forecast.model);
  j["state"] = to_json(forecast.as_state(tick));
  return j;
}

}  // namespace ciim
