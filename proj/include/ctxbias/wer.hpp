#pragma once

#include <cstdint>
#include <vector>

namespace ctxbias {

struct WerResult {
  int64_t substitutions = 0;
  int64_t insertions = 0;
  int64_t deletions = 0;
  int64_t ref_count = 0;
  double wer = 0.0;  // percent, denominator max(1, ref_count)

  int64_t edits() const { return substitutions + insertions + deletions; }
};

// Minimal-edit alignment with unit costs. Ties are resolved preferring
// substitution over insertion over deletion so S/I/D counts are reproducible.
WerResult wer(const std::vector<int>& ref, const std::vector<int>& hyp);

// Corpus-level WER: total edits over total reference tokens (percent).
struct CorpusWer {
  int64_t substitutions = 0, insertions = 0, deletions = 0, ref_count = 0;
  void add(const WerResult& r) {
    substitutions += r.substitutions;
    insertions += r.insertions;
    deletions += r.deletions;
    ref_count += r.ref_count;
  }
  double percent() const {
    int64_t denom = ref_count > 0 ? ref_count : 1;
    return 100.0 * static_cast<double>(substitutions + insertions + deletions) /
           static_cast<double>(denom);
  }
};

}  // namespace ctxbias
