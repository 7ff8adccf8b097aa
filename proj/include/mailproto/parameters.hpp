#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mailproto/autograd.hpp"
#include "mailproto/random.hpp"

namespace mailproto {

// Owns parameters at stable addresses so tapes may key on them.
class ParameterStore {
 public:
  ag::Parameter& add(std::string name, ag::Matrix value, bool no_decay = false) {
    params_.push_back(std::make_unique<ag::Parameter>(ag::Parameter{std::move(name), std::move(value), no_decay}));
    return *params_.back();
  }
  ag::Parameter& normal(std::string name, Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng,
                        bool no_decay = false) {
    ag::Matrix m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
      for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.normal(0.0, stddev);
    return add(std::move(name), std::move(m), no_decay);
  }
  ag::Parameter& zeros(std::string name, Eigen::Index rows, Eigen::Index cols, bool no_decay = true) {
    return add(std::move(name), ag::Matrix::Zero(rows, cols), no_decay);
  }
  ag::Parameter& ones(std::string name, Eigen::Index rows, Eigen::Index cols, bool no_decay = true) {
    return add(std::move(name), ag::Matrix::Ones(rows, cols), no_decay);
  }

  std::vector<ag::Parameter*> all() const {
    std::vector<ag::Parameter*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.get());
    return out;
  }
  ag::Parameter* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }
  std::size_t size() const { return params_.size(); }

 private:
  std::vector<std::unique_ptr<ag::Parameter>> params_;
};

}  // namespace mailproto
