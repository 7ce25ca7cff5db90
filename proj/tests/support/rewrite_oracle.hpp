#pragma once

// Straight-line transcription of the attack algorithm, kept free of any library
// code so it can serve as an independent oracle. Slots are 1-based.

#include <cmath>
#include <cstdlib>
#include <vector>

namespace oracle {

struct RewriteOut {
  int st = 0;
  int et = 0;
  double d = 0.0;
  double ch = 0.0;
  int ta = 0;
  std::vector<int> av;
};

inline std::vector<int> occupancy(int st, int et, int n_step) {
  std::vector<int> av(static_cast<std::size_t>(n_step) + 1, 0);  // index 0 unused
  if (st < et) {
    for (int s = st; s < et; ++s) av[s] = 1;
  } else {
    for (int s = 1; s < et; ++s) av[s] = 1;
    for (int s = st; s <= n_step; ++s) av[s] = 1;
  }
  return av;
}

inline int sum(const std::vector<int>& av) {
  int ta = 0;
  for (std::size_t i = 1; i < av.size(); ++i) ta += av[i];
  return ta;
}

inline int wrap(int s, int n_step) {
  int r = (s - 1) % n_step;
  if (r < 0) r += n_step;
  return r + 1;
}

/// kind: 0 untouched, 1 demand only, 2 later start, 3 earlier end.
inline RewriteOut run(int kind, int st, int et, double d, double acr, int dt_minutes, int horizon_h) {
  const int n_step = horizon_h * (60 / dt_minutes);
  auto av = occupancy(st, et, n_step);
  const int ta = sum(av);
  const double ch = d * (60.0 / dt_minutes) / ta;
  RewriteOut out{st, et, d, ch, ta, av};
  if (kind == 0) return out;

  const double h = dt_minutes / 60.0;
  // ACR·Ta·h − Ch·h + d, with Ch·h rewritten as (Ch/Ta)·Ta·h.
  const double dbar = d + (acr - ch / ta) * ta * h;
  const double chbar = dbar * (60.0 / dt_minutes) / ta;
  out.d = dbar;
  out.ch = chbar;
  if (kind == 1) return out;

  int tabar = ta;
  if (chbar > 0.0) {
    const double raw = d * (60.0 / dt_minutes) / chbar;
    const double r = std::floor(raw + 0.5);
    tabar = r < 1.0 ? 1 : (r > ta ? ta : static_cast<int>(r));
  }
  const int shift = std::abs(ta - tabar);
  if (kind == 2) {
    out.st = wrap(st + shift, n_step);
  } else {
    out.et = wrap(et - shift, n_step);
  }
  out.av = occupancy(out.st, out.et, n_step);
  out.ta = sum(out.av);
  return out;
}

}  // namespace oracle
