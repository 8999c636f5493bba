#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "prosograph/model.hpp"

namespace prosograph {

struct DtwResult {
  std::vector<std::pair<int, int>> path;  // monotone, (0,0) .. (Ta-1, Tb-1)
  double cost = 0.0;
};

namespace detail {
inline double frame_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (size_t d = 0; d < a.size(); ++d) acc += (a[d] - b[d]) * (a[d] - b[d]);
  return std::sqrt(acc);
}
}  // namespace detail

// Dynamic programming alignment with steps {(1,0), (0,1), (1,1)} and Euclidean
// frame distance. Ties prefer the diagonal so the traceback is deterministic.
inline DtwResult dtw_align(const std::vector<std::vector<double>>& a,
                           const std::vector<std::vector<double>>& b) {
  const int ta = static_cast<int>(a.size()), tb = static_cast<int>(b.size());
  if (ta == 0 || tb == 0) throw ValidationError("dtw_align: empty input sequence");
  for (const auto& f : a)
    if (f.size() != a.front().size()) throw ValidationError("dtw_align: ragged frames");
  for (const auto& f : b)
    if (f.size() != a.front().size())
      throw ValidationError("dtw_align: frame width mismatch between sequences");

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> cost(static_cast<size_t>(ta) * tb, inf);
  std::vector<int8_t> move(static_cast<size_t>(ta) * tb, -1);  // 0=diag 1=up 2=left
  auto at = [tb](int i, int j) { return static_cast<size_t>(i) * tb + j; };

  for (int i = 0; i < ta; ++i)
    for (int j = 0; j < tb; ++j) {
      const double d = detail::frame_distance(a[i], b[j]);
      if (i == 0 && j == 0) {
        cost[at(0, 0)] = d;
        continue;
      }
      double best = inf;
      int8_t arg = -1;
      if (i > 0 && j > 0 && cost[at(i - 1, j - 1)] < best) {
        best = cost[at(i - 1, j - 1)];
        arg = 0;
      }
      if (i > 0 && cost[at(i - 1, j)] < best) {
        best = cost[at(i - 1, j)];
        arg = 1;
      }
      if (j > 0 && cost[at(i, j - 1)] < best) {
        best = cost[at(i, j - 1)];
        arg = 2;
      }
      cost[at(i, j)] = best + d;
      move[at(i, j)] = arg;
    }

  DtwResult out;
  out.cost = cost[at(ta - 1, tb - 1)];
  int i = ta - 1, j = tb - 1;
  out.path.emplace_back(i, j);
  while (i != 0 || j != 0) {
    switch (move[at(i, j)]) {
      case 0: --i; --j; break;
      case 1: --i; break;
      default: --j; break;
    }
    out.path.emplace_back(i, j);
  }
  std::reverse(out.path.begin(), out.path.end());
  return out;
}

// ---------------------------------------------------------------------------
// objective metrics
// ---------------------------------------------------------------------------

struct SentenceEvalRow {
  std::string doc_id;
  int position = 0;
  double f0_rmse = 0.0;
  double duration_mse = 0.0;
  double mcd_proxy = 0.0;
};

// DTW runs on mel; the F0 pairing reuses the mel alignment path. The MCD
// formula is applied to mel channels directly (synthetic mels are not
// cepstra), hence the _proxy naming.
inline SentenceEvalRow eval_sentence_metrics(const std::vector<std::vector<double>>& mel_pred,
                                             const std::vector<double>& f0_pred,
                                             const std::vector<double>& durations_pred,
                                             const SentenceRecord& target) {
  SentenceEvalRow row;
  DtwResult alignment = dtw_align(mel_pred, target.mel);

  double f0_acc = 0.0, mcd_acc = 0.0;
  constexpr double kMcdScale = 10.0 / 2.302585092994046;  // 10/ln 10
  for (const auto& [i, j] : alignment.path) {
    const double df = f0_pred[i] - target.f0[j];
    f0_acc += df * df;
    double sq = 0.0;
    for (size_t d = 0; d < mel_pred[i].size(); ++d) {
      const double dm = mel_pred[i][d] - target.mel[j][d];
      sq += dm * dm;
    }
    mcd_acc += kMcdScale * std::sqrt(2.0 * sq);
  }
  row.f0_rmse = std::sqrt(f0_acc / static_cast<double>(alignment.path.size()));
  row.mcd_proxy = mcd_acc / static_cast<double>(alignment.path.size());

  double dur_acc = 0.0;
  for (size_t p = 0; p < target.durations.size(); ++p) {
    const double dd = durations_pred[p] - static_cast<double>(target.durations[p]);
    dur_acc += dd * dd;
  }
  row.duration_mse = dur_acc / static_cast<double>(target.durations.size());
  return row;
}

struct EvalReport {
  double f0_rmse = 0.0;
  double duration_mse = 0.0;
  double mcd_proxy = 0.0;
  std::vector<SentenceEvalRow> sentences;
  std::string config_hash;
  uint64_t seed = 0;

  nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : sentences)
      rows.push_back({{"doc_id", r.doc_id},
                      {"position", r.position},
                      {"f0_rmse", r.f0_rmse},
                      {"duration_mse", r.duration_mse},
                      {"mcd_proxy", r.mcd_proxy}});
    return {{"config_hash", config_hash},
            {"seed", seed},
            {"f0_rmse", f0_rmse},
            {"duration_mse", duration_mse},
            {"mcd_proxy", mcd_proxy},
            {"sentences", std::move(rows)}};
  }
};

// Pure function of (model, corpus slice): eval mode, no dropout, predicted
// durations drive the frame rail.
inline EvalReport evaluate_model(const TtsModel& model, const PreparedCorpus& data,
                                 const std::vector<int>& window_ids) {
  EvalReport report;
  report.config_hash = model.cfg.hash();
  report.seed = model.cfg.seed;
  if (window_ids.empty()) throw ValidationError("evaluate_model: no windows selected");

  for (int wi : window_ids) {
    const PreparedWindow& window = data.windows[wi];
    const PreparedSentence& cur = data.sentences[window.cur];
    WindowForward fwd = window_forward(model, data, window, /*training=*/false, Rng(0));

    std::vector<int> pred_frames = predicted_durations(fwd.preds.logdur);
    TtsPredictions pred = forward_tts(model.backbone, fwd.conditioned, pred_frames);

    std::vector<std::vector<double>> mel_pred(pred.mel.dim(0),
                                              std::vector<double>(pred.mel.dim(1)));
    for (int i = 0; i < pred.mel.dim(0); ++i)
      for (int d = 0; d < pred.mel.dim(1); ++d) mel_pred[i][d] = pred.mel.at(i, d);
    std::vector<double> durations_pred(fwd.preds.logdur.numel());
    for (int p = 0; p < fwd.preds.logdur.numel(); ++p)
      durations_pred[p] = std::exp(fwd.preds.logdur.at(p));

    SentenceEvalRow row = eval_sentence_metrics(mel_pred, pred.f0.values(), durations_pred, *cur.rec);
    row.doc_id = window.doc_id;
    row.position = window.position;
    report.f0_rmse += row.f0_rmse;
    report.duration_mse += row.duration_mse;
    report.mcd_proxy += row.mcd_proxy;
    report.sentences.push_back(std::move(row));
  }
  const double n = static_cast<double>(report.sentences.size());
  report.f0_rmse /= n;
  report.duration_mse /= n;
  report.mcd_proxy /= n;
  return report;
}

}  // namespace prosograph
