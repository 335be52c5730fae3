#include "ctxbias/wer.hpp"

#include <vector>

namespace ctxbias {

WerResult wer(const std::vector<int>& ref, const std::vector<int>& hyp) {
  const size_t n = ref.size(), m = hyp.size();
  std::vector<std::vector<int64_t>> d(n + 1, std::vector<int64_t>(m + 1, 0));
  for (size_t i = 0; i <= n; ++i) d[i][0] = static_cast<int64_t>(i);
  for (size_t j = 0; j <= m; ++j) d[0][j] = static_cast<int64_t>(j);
  for (size_t i = 1; i <= n; ++i) {
    for (size_t j = 1; j <= m; ++j) {
      int64_t sub = d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      int64_t ins = d[i][j - 1] + 1;
      int64_t del = d[i - 1][j] + 1;
      d[i][j] = std::min(sub, std::min(ins, del));
    }
  }
  WerResult r;
  r.ref_count = static_cast<int64_t>(n);
  // Backtrack preferring substitution/match, then insertion, then deletion.
  size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      int64_t cost = ref[i - 1] == hyp[j - 1] ? 0 : 1;
      if (d[i][j] == d[i - 1][j - 1] + cost) {
        if (cost) ++r.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (j > 0 && d[i][j] == d[i][j - 1] + 1) {
      ++r.insertions;
      --j;
      continue;
    }
    ++r.deletions;
    --i;
  }
  int64_t denom = r.ref_count > 0 ? r.ref_count : 1;
  r.wer = 100.0 * static_cast<double>(r.edits()) / static_cast<double>(denom);
  return r;
}

}  // namespace ctxbias
