#pragma once

// Next-tick projection of the eight kernel input channels. Two models:
// a single gated recurrent cell trained by full-batch gradient descent through
// time, and a per-channel AR(1) fallback that needs no training.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "ciim/core_model.hpp"
#include "ciim/json_io.hpp"

namespace ciim {

inline constexpr std::size_t kChannelCount = 8;

enum class Channel : std::uint8_t {
  kThreat,
  kVulnerability,
  kExposure,
  kResilience,
  kDHist,
  kDReal,
  kBUser,
  kAPatterns,
};

inline constexpr std::array<std::string_view, kChannelCount> kChannelNames{
    "threat", "vulnerability", "exposure", "resilience",
    "d_hist", "d_real",        "b_user",   "a_patterns"};

using Observation = std::array<double, kChannelCount>;

Observation observation_of(const RiskState& state);
RiskState state_of(const Observation& obs, std::uint64_t tick);

// Lower bound used when clamping a predicted resilience; resilience must stay
// strictly positive.
inline constexpr double kDefaultResilienceFloor = 1e-6;

Observation clamp_to_legal(Observation obs, double resilience_floor = kDefaultResilienceFloor);

// Time-major history of the eight channels. All values are validated against
// their legal ranges on construction.
class SeriesWindow {
 public:
  SeriesWindow() = default;
  explicit SeriesWindow(std::vector<Observation> rows);
  static SeriesWindow from_states(std::span<const RiskState> states);

  std::size_t length() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }
  const Observation& at(std::size_t t) const { return rows_.at(t); }
  const Observation& back() const { return rows_.back(); }
  const std::vector<Observation>& rows() const { return rows_; }

 private:
  std::vector<Observation> rows_;
};

// ---------------------------------------------------------------- GRU

// z  = sigmoid(Wz x + Uz h + bz)
// r  = sigmoid(Wr x + Ur h + br)
// h~ = tanh(Wh x + Uh (r * h) + bh)
// h' = (1 - z) * h + z * h~
// y  = Wy h' + by         (prediction of the next observation)
struct GruParams {
  int hidden_size = 8;
  Eigen::MatrixXd w_z, u_z, b_z;
  Eigen::MatrixXd w_r, u_r, b_r;
  Eigen::MatrixXd w_h, u_h, b_h;
  Eigen::MatrixXd w_y, b_y;

  static GruParams zeros(int hidden_size = 8);
  // Uniform in [-scale, scale] from the seeded generator.
  static GruParams seeded(std::uint64_t seed, int hidden_size = 8, double scale = 0.1);

  // Visits every tensor in a fixed order; f(name, matrix).
  template <class F>
  void visit(F&& f) {
    f("w_z", w_z); f("u_z", u_z); f("b_z", b_z);
    f("w_r", w_r); f("u_r", u_r); f("b_r", b_r);
    f("w_h", w_h); f("u_h", u_h); f("b_h", b_h);
    f("w_y", w_y); f("b_y", b_y);
  }
  template <class F>
  void visit(F&& f) const {
    f("w_z", w_z); f("u_z", u_z); f("b_z", b_z);
    f("w_r", w_r); f("u_r", u_r); f("b_r", b_r);
    f("w_h", w_h); f("u_h", u_h); f("b_h", b_h);
    f("w_y", w_y); f("b_y", b_y);
  }

  // this += scale * other, tensor by tensor.
  void add_scaled(const GruParams& other, double scale);

  std::size_t parameter_count() const;
  // Throws std::invalid_argument when shapes disagree with hidden_size.
  void check_shapes() const;

  bool operator==(const GruParams& other) const;
};

Eigen::VectorXd gru_step(const GruParams& params, const Eigen::VectorXd& hidden,
                         std::span<const double> input);

// Mean squared one-step-ahead error over all channels and all transitions of
// the window (requires length >= 2).
double one_step_loss(const GruParams& params, const SeriesWindow& history);

// Same loss plus its analytic gradient by backpropagation through time.
double one_step_loss_and_gradient(const GruParams& params, const SeriesWindow& history,
                                  GruParams& gradient);

struct TrainConfig {
  double learning_rate = 0.5;
  int epochs = 200;
  std::uint64_t seed = 0;
  int hidden_size = 8;
};

struct TrainResult {
  GruParams params;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

// Full-batch gradient descent from the seeded initialization. Returns the
// lowest-loss parameters seen, so final_loss <= initial_loss always holds.
TrainResult train_forecaster(const SeriesWindow& history, const TrainConfig& config);

// ---------------------------------------------------------------- AR(1)

// x_{t+1} = phi * x_t + c, per channel. Default is the identity forecast.
struct Ar1Model {
  Observation phi{1, 1, 1, 1, 1, 1, 1, 1};
  Observation c{};

  bool operator==(const Ar1Model&) const = default;
};

// Least-squares fit per channel; channels with no variation (or windows of
// length < 3) keep the identity forecast.
Ar1Model fit_ar1(const SeriesWindow& history);

enum class ModelId : std::uint8_t { kGru, kAr1 };
std::string_view to_string(ModelId id);

struct Forecast {
  Observation predicted{};
  ModelId model = ModelId::kAr1;

  RiskState as_state(std::uint64_t tick) const { return state_of(predicted, tick); }
};

Forecast forecast_next(const GruParams& params, const SeriesWindow& history,
                       double resilience_floor = kDefaultResilienceFloor);
Forecast forecast_next(const Ar1Model& model, const SeriesWindow& history,
                       double resilience_floor = kDefaultResilienceFloor);

// ---------------------------------------------------------------- JSON

inline constexpr int kModelFormatVersion = 1;

Json to_json(const GruParams& params);
GruParams gru_params_from_json(const Json& j, const std::string& path = "model");
Json to_json(const Ar1Model& model);
Ar1Model ar1_from_json(const Json& j, const std::string& path);
Json to_json(const Forecast& forecast, std::uint64_t tick);

}  // namespace ciim
