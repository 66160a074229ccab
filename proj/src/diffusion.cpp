#include "lplab/diffusion.hpp"

#include <cstdio>
#include <sstream>

namespace lplab {

std::string schedule_csv(const NoiseSchedule& s) {
  std::ostringstream out;
  out << "t,beta,alpha_bar,alpha,sigma,nsr\n";
  if (s.discrete()) {
    char buf[256];
    for (int t = 1; t <= s.T; ++t) {
      double n = nsr(s, t);
      std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%.12g,%.12g,%.12g\n", t,
                    s.beta[static_cast<size_t>(t - 1)], s.alpha_bar[static_cast<size_t>(t - 1)],
                    s.alpha[static_cast<size_t>(t - 1)], s.sigma[static_cast<size_t>(t - 1)], n);
      out << buf;
    }
  } else {
    char buf[256];
    for (int i = 0; i <= 100; ++i) {
      double t = i / 100.0;
      double a = 1.0 - t, sg = t;
      std::snprintf(buf, sizeof(buf), "%.2f,,%.12g,%.12g,%.12g,%.12g\n", t, a * a, a, sg,
                    a > 0 ? sg / a : std::numeric_limits<double>::infinity());
      out << buf;
    }
  }
  return out.str();
}

}  // namespace lplab
