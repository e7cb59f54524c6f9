#include "oqreps/instance_io.hpp"

#include <fstream>
#include <stdexcept>

namespace oqreps {

namespace {

constexpr const char* kFormat = "oqreps-linear-mdp";

template <typename Mat>
std::vector<double> flatten_row_major(const Mat& m) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
  }
  return out;
}

template <typename Mat>
Mat unflatten_row_major(const std::vector<double>& v, Eigen::Index rows, Eigen::Index cols) {
  if (static_cast<Eigen::Index>(v.size()) != rows * cols) {
    throw std::invalid_argument("instance array has the wrong length");
  }
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = v[static_cast<std::size_t>(i * cols + j)];
  }
  return m;
}

}  // namespace

nlohmann::json instance_to_json(const LinearMdp& mdp) {
  nlohmann::json j;
  j["format"] = kFormat;
  j["version"] = 1;
  j["layers"] = mdp.layer_sizes();
  j["K"] = mdp.num_actions();
  j["d"] = mdp.dim();
  j["sigma"] = mdp.sigma();
  j["R"] = mdp.reward_bound();
  nlohmann::json features = nlohmann::json::array();
  nlohmann::json measures = nlohmann::json::array();
  for (int h = 0; h < mdp.num_decision_layers(); ++h) {
    features.push_back(flatten_row_major(mdp.features(h)));
    measures.push_back(flatten_row_major(mdp.measure(h)));
  }
  j["features"] = std::move(features);
  j["measures"] = std::move(measures);
  return j;
}

LinearMdp instance_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string{}) != kFormat) {
    throw std::invalid_argument("not an oqreps instance file");
  }
  const auto layers = j.at("layers").get<std::vector<int>>();
  const int k = j.at("K").get<int>();
  const int d = j.at("d").get<int>();
  const auto& jf = j.at("features");
  const auto& jm = j.at("measures");
  if (jf.size() + 1 != layers.size() || jm.size() + 1 != layers.size()) {
    throw std::invalid_argument("instance must list one feature and measure block per decision layer");
  }
  std::vector<FeatureMatrix> features;
  std::vector<Eigen::MatrixXd> measures;
  for (std::size_t h = 0; h + 1 < layers.size(); ++h) {
    features.push_back(unflatten_row_major<FeatureMatrix>(jf[h].get<std::vector<double>>(),
                                                          layers[h] * k, d));
    measures.push_back(unflatten_row_major<Eigen::MatrixXd>(jm[h].get<std::vector<double>>(), d,
                                                            layers[h + 1]));
  }
  return LinearMdp(layers, k, std::move(features), std::move(measures), j.at("sigma").get<double>(),
                   j.at("R").get<double>());
}

void save_instance(const LinearMdp& mdp, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << instance_to_json(mdp).dump(2) << '\n';
}

LinearMdp load_instance(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return instance_from_json(nlohmann::json::parse(in));
}

}  // namespace oqreps
