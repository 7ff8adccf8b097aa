// json_close <a.json> <b.json> [tolerance]: exit 0 when the documents match, numbers within tolerance.
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "json.hpp"

namespace {

bool close(const nlohmann::json& a, const nlohmann::json& b, double tol, const std::string& path) {
  if (a.is_number() && b.is_number()) {
    const double x = a.get<double>(), y = b.get<double>();
    if (std::abs(x - y) <= tol * std::max(1.0, std::abs(y))) return true;
    std::cerr << path << ": " << x << " vs " << y << "\n";
    return false;
  }
  if (a.type() != b.type()) {
    std::cerr << path << ": type differs\n";
    return false;
  }
  if (a.is_object()) {
    if (a.size() != b.size()) {
      std::cerr << path << ": key sets differ\n";
      return false;
    }
    for (auto it = a.begin(); it != a.end(); ++it) {
      if (!b.contains(it.key())) {
        std::cerr << path << "." << it.key() << ": missing\n";
        return false;
      }
      if (!close(it.value(), b.at(it.key()), tol, path + "." + it.key())) return false;
    }
    return true;
  }
  if (a.is_array()) {
    if (a.size() != b.size()) {
      std::cerr << path << ": lengths differ\n";
      return false;
    }
    for (std::size_t i = 0; i < a.size(); ++i)
      if (!close(a[i], b[i], tol, path + "[" + std::to_string(i) + "]")) return false;
    return true;
  }
  if (a != b) {
    std::cerr << path << ": " << a.dump() << " vs " << b.dump() << "\n";
    return false;
  }
  return true;
}

nlohmann::json load(const char* path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(std::string("cannot open ") + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return nlohmann::json::parse(ss.str());
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 3) {
    std::cerr << "usage: json_close a.json b.json [tolerance]\n";
    return 2;
  }
  try {
    const double tol = argc > 3 ? std::stod(argv[3]) : 1e-9;
    return close(load(argv[1]), load(argv[2]), tol, "$") ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
}
