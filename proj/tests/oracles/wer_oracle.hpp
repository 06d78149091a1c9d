#pragma once

// Exhaustive word alignment: every interleaving of match/substitute,
// delete and insert is enumerated. Among minimum-edit alignments the one
// with the most substitutions is reported. Exponential; tiny inputs only.

#include <cstddef>
#include <string>
#include <tuple>
#include <vector>

namespace oracle {

struct EditCounts {
  std::size_t s = 0, d = 0, i = 0;
  std::size_t edits() const { return s + d + i; }
};

inline bool better(const EditCounts& a, const EditCounts& b) {
  if (a.edits() != b.edits()) return a.edits() < b.edits();
  return a.s > b.s;
}

inline EditCounts align_exhaustive(const std::vector<std::string>& ref,
                                   const std::vector<std::string>& hyp, std::size_t r = 0,
                                   std::size_t h = 0) {
  if (r == ref.size()) return {0, 0, hyp.size() - h};
  if (h == hyp.size()) return {0, ref.size() - r, 0};
  EditCounts best = align_exhaustive(ref, hyp, r + 1, h + 1);
  if (ref[r] != hyp[h]) ++best.s;
  EditCounts del = align_exhaustive(ref, hyp, r + 1, h);
  ++del.d;
  if (better(del, best)) best = del;
  EditCounts ins = align_exhaustive(ref, hyp, r, h + 1);
  ++ins.i;
  if (better(ins, best)) best = ins;
  return best;
}

}  // namespace oracle
