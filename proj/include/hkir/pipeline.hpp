#ifndef HKIR_PIPELINE_HPP
#define HKIR_PIPELINE_HPP

#include "hkir/histogram.hpp"
#include "hkir/runtime.hpp"

#include <map>
#include <optional>
#include <string>

namespace hkir {

// Pipeline driver: parse -> simplify -> histogram -> anf -> licm ->
// fuse/lower -> common-indexing elimination -> specialize. Each stage can
// be disabled for the ablation study (loop fusion requires LICM).

struct PipelineConfig {
  bool do_simplify = true;   // never disabled by the CLI; kept for tests
  bool do_histogram = true;
  bool do_licm = true;
  bool do_fusion = true;
  bool do_cie = true;
  bool do_specialize = true;
  bool track_weight = true;
};

struct PipelineDumps {
  std::string simplify_before, simplify_after;
  std::string simplified, histogram, anf, licm, fused, specialized;
};

struct CompileResult {
  Program simplified;   // after simplify (+ histogram when enabled)
  ImpProgram imp;
  std::string diagnostic;
  std::vector<Expr> side_conditions;
};

inline CompileResult compile_pipeline(const Program &p, const PipelineConfig &cfg,
                                      const StaticInfo &info, PipelineDumps *dumps = nullptr) {
  if (cfg.do_fusion && !cfg.do_licm)
    throw std::invalid_argument("loop fusion requires LICM");
  CompileResult out;
  Program cur = p;
  if (cfg.do_simplify) {
    SimplifyResult sr = simplify(cur);
    cur = sr.program;
    out.diagnostic = sr.diagnostic;
    out.side_conditions = sr.side_conditions;
    if (dumps) {
      dumps->simplify_before = sr.dump_before;
      dumps->simplify_after = sr.dump_after;
      dumps->simplified = to_string(cur);
    }
  } else {
    NameGen names;
    cur = expand_dirichlet(uniquify_binders(cur), names);
  }
  if (cfg.do_histogram) {
    cur = apply_histogram_pass(cur);
    if (dumps) dumps->histogram = to_string(cur);
  }
  out.simplified = cur;
  cur = anf(cur);
  if (dumps) dumps->anf = to_string(cur);
  if (cfg.do_licm) {
    cur = licm(cur);
    if (dumps) dumps->licm = to_string(cur);
  }
  out.imp = fuse_and_lower(cur, cfg.do_fusion, cfg.track_weight);
  if (cfg.do_cie) out.imp = eliminate_common_indexing(std::move(out.imp));
  if (dumps) dumps->fused = to_string(out.imp);
  if (cfg.do_specialize) {
    out.imp = specialize(std::move(out.imp), info);
    if (dumps) dumps->specialized = to_string(out.imp);
  }
  return out;
}

} // namespace hkir

#endif
