#pragma once

#include <string>
#include <vector>

namespace dida {

struct GradCheckCase {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

// Central finite differences vs analytic gradients, double precision.
// `which` selects cases by substring ("all" runs everything); every case is
// repeated over `seeds` random draws and reports the worst relative error.
std::vector<GradCheckCase> run_gradcheck(const std::string& which, int seeds,
                                         double tol = 1e-6, double eps = 1e-5);

}  // namespace dida
