#pragma once

#include <array>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "herbs/train.hpp"

namespace herbs {

struct SelMaskDump {
  int64_t h = 0, w = 0;
  std::vector<int64_t> rle;
};

// one prediction-dump record per image
struct DumpRecord {
  std::string id;
  int label = -1;
  std::array<std::vector<double>, 4> td_logits;  // empty vector = head absent
  std::array<std::vector<double>, 4> bu_logits;
  std::vector<double> comb_logits;
  std::vector<double> fused;
  int pred = -1;        // argmax of fused
  int td_argmax = -1;   // argmax of the summed top-down logits, -1 if absent
  int bu_argmax = -1;
  int comb_argmax = -1;
  std::vector<SelMaskDump> sel_masks;  // per stage, variant e only
};

namespace detail {
inline int argmax_first(const std::vector<double>& v) {
  int best = 0;
  for (size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[size_t(best)]) best = int(i);
  return best;
}
}  // namespace detail

inline std::vector<double> tensor_row(const Tensor& t, int64_t row) {
  const int64_t c = t.dim(1);
  return std::vector<double>(t.data() + row * c, t.data() + (row + 1) * c);
}

// build dump records for one forward output
inline void append_dump_records(std::vector<DumpRecord>& out, const ImageBatch& batch,
                                const ForwardOutput& fwd) {
  const int64_t b = batch.batch_size();
  const int64_t c = fwd.bundle.fused_probs.dim(1);
  for (int64_t i = 0; i < b; ++i) {
    DumpRecord rec;
    rec.id = batch.ids[size_t(i)];
    rec.label = batch.labels ? (*batch.labels)[size_t(i)] : -1;
    std::vector<double> td_sum(size_t(c), 0.0), bu_sum(size_t(c), 0.0);
    bool any_td = false, any_bu = false;
    for (size_t s = 0; s < 4; ++s) {
      if (!fwd.bundle.td_logits[s].empty()) {
        rec.td_logits[s] = tensor_row(fwd.bundle.td_logits[s], i);
        for (int64_t j = 0; j < c; ++j) td_sum[size_t(j)] += rec.td_logits[s][size_t(j)];
        any_td = true;
      }
      if (!fwd.bundle.bu_logits[s].empty()) {
        rec.bu_logits[s] = tensor_row(fwd.bundle.bu_logits[s], i);
        for (int64_t j = 0; j < c; ++j) bu_sum[size_t(j)] += rec.bu_logits[s][size_t(j)];
        any_bu = true;
      }
    }
    if (!fwd.bundle.comb_logits.empty()) {
      rec.comb_logits = tensor_row(fwd.bundle.comb_logits, i);
      rec.comb_argmax = detail::argmax_first(rec.comb_logits);
    }
    rec.fused = tensor_row(fwd.bundle.fused_probs, i);
    rec.pred = detail::argmax_first(rec.fused);
    if (any_td) rec.td_argmax = detail::argmax_first(td_sum);
    if (any_bu) rec.bu_argmax = detail::argmax_first(bu_sum);
    for (const auto& stage : fwd.selections) {
      const SelectionResult& sel = stage[size_t(i)];
      SelMaskDump m;
      m.h = sel.height;
      m.w = sel.width;
      m.rle = rle_encode(sel.mask());
      rec.sel_masks.push_back(std::move(m));
    }
    out.push_back(std::move(rec));
  }
}

inline nlohmann::json dump_record_to_json(const DumpRecord& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["label"] = r.label;
  auto arr4 = [](const std::array<std::vector<double>, 4>& a) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& v : a) out.push_back(v);
    return out;
  };
  j["td_logits"] = arr4(r.td_logits);
  j["bu_logits"] = arr4(r.bu_logits);
  j["comb_logits"] = r.comb_logits;
  j["fused"] = r.fused;
  j["pred"] = r.pred;
  j["td_argmax"] = r.td_argmax;
  j["bu_argmax"] = r.bu_argmax;
  j["comb_argmax"] = r.comb_argmax;
  nlohmann::json masks = nlohmann::json::array();
  for (const auto& m : r.sel_masks) masks.push_back({{"h", m.h}, {"w", m.w}, {"rle", m.rle}});
  j["sel_masks"] = masks;
  return j;
}

inline DumpRecord dump_record_from_json(const nlohmann::json& j) {
  DumpRecord r;
  r.id = j.at("id").get<std::string>();
  r.label = j.at("label").get<int>();
  for (size_t s = 0; s < 4; ++s) {
    r.td_logits[s] = j.at("td_logits").at(s).get<std::vector<double>>();
    r.bu_logits[s] = j.at("bu_logits").at(s).get<std::vector<double>>();
  }
  r.comb_logits = j.at("comb_logits").get<std::vector<double>>();
  r.fused = j.at("fused").get<std::vector<double>>();
  r.pred = j.at("pred").get<int>();
  r.td_argmax = j.at("td_argmax").get<int>();
  r.bu_argmax = j.at("bu_argmax").get<int>();
  r.comb_argmax = j.at("comb_argmax").get<int>();
  for (const auto& m : j.at("sel_masks")) {
    SelMaskDump d;
    d.h = m.at("h").get<int64_t>();
    d.w = m.at("w").get<int64_t>();
    d.rle = m.at("rle").get<std::vector<int64_t>>();
    r.sel_masks.push_back(std::move(d));
  }
  return r;
}

inline void write_dump(const std::string& path, const std::vector<DumpRecord>& records) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write dump: " + path);
  for (const auto& r : records) os << dump_record_to_json(r).dump() << "\n";
}

inline std::vector<DumpRecord> read_dump(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read dump: " + path);
  std::vector<DumpRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(dump_record_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

// ---- metrics ----

// fraction (percent) of records whose label is among the k largest fused
// probabilities; ties resolved by ascending class index
inline double top_k_accuracy(const std::vector<DumpRecord>& dump, int k) {
  if (dump.empty()) throw std::invalid_argument("top_k_accuracy: empty dump");
  const int c = int(dump.front().fused.size());
  if (k < 1 || k > c) throw std::invalid_argument("top_k_accuracy: k out of range");
  int64_t hits = 0;
  for (const auto& r : dump) {
    std::vector<int> idx(r.fused.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
      if (r.fused[size_t(a)] != r.fused[size_t(b)]) return r.fused[size_t(a)] > r.fused[size_t(b)];
      return a < b;
    });
    for (int i = 0; i < k; ++i)
      if (idx[size_t(i)] == r.label) {
        ++hits;
        break;
      }
  }
  return 100.0 * double(hits) / double(dump.size());
}

struct GenericClassRow {
  std::string name;
  int64_t num = 0;        // samples of this generic class
  double precision = 0;   // percent of correct fine predictions
  double fp = 0;          // predictions landing outside the generic class
};

// Per-generic-class precision and false-positive counts plus an unweighted
// average row. Only generic classes with more than `category_threshold`
// fine categories are listed.
inline std::vector<GenericClassRow> generic_class_report(
    const std::vector<DumpRecord>& dump, const std::map<int, int>& fine_to_generic,
    int category_threshold = 6, const std::map<int, std::string>* generic_names = nullptr) {
  std::map<int, int64_t> category_count;
  for (const auto& [fine, gen] : fine_to_generic) {
    (void)fine;
    ++category_count[gen];
  }
  std::map<int, GenericClassRow> rows;
  std::map<int, int64_t> correct;
  for (const auto& r : dump) {
    auto it = fine_to_generic.find(r.label);
    if (it == fine_to_generic.end())
      throw std::invalid_argument("generic_class_report: unmapped fine label " +
                                  std::to_string(r.label));
    const int gen = it->second;
    auto pit = fine_to_generic.find(r.pred);
    if (pit == fine_to_generic.end())
      throw std::invalid_argument("generic_class_report: unmapped predicted label " +
                                  std::to_string(r.pred));
    GenericClassRow& row = rows[gen];
    ++row.num;
    if (r.pred == r.label) ++correct[gen];
    if (pit->second != gen) row.fp += 1.0;
  }
  std::vector<GenericClassRow> out;
  for (auto& [gen, row] : rows) {
    if (category_count[gen] <= category_threshold) continue;
    row.name = generic_names && generic_names->count(gen) ? generic_names->at(gen)
                                                          : "G" + std::to_string(gen);
    row.precision = row.num ? 100.0 * double(correct[gen]) / double(row.num) : 0.0;
    out.push_back(row);
  }
  if (!out.empty()) {
    GenericClassRow avg;
    avg.name = "Average";
    for (const auto& r : out) {
      avg.num += r.num;
      avg.precision += r.precision;
      avg.fp += r.fp;
    }
    const double n = double(out.size());
    avg.num = int64_t(std::llround(double(avg.num) / n));
    avg.precision /= n;
    avg.fp /= n;
    out.push_back(avg);
  }
  return out;
}

// among samples the top-down path got wrong, the fraction the bottom-up
// path got right; 0 when the top-down path made no mistakes
inline double false_true_rate(const std::vector<int>& td_preds, const std::vector<int>& bu_preds,
                              const std::vector<int>& labels) {
  if (td_preds.size() != bu_preds.size() || td_preds.size() != labels.size())
    throw std::invalid_argument("false_true_rate: length mismatch");
  int64_t ft = 0, ff = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (td_preds[i] == labels[i]) continue;
    if (bu_preds[i] == labels[i])
      ++ft;
    else
      ++ff;
  }
  return (ft + ff) == 0 ? 0.0 : double(ft) / double(ft + ff);
}

// ---- dataset evaluation ----

struct EvalResult {
  std::vector<DumpRecord> records;
  double top1 = 0.0;
};

inline EvalResult evaluate(HerbsNet& net, const std::vector<Sample>& samples,
                           const TrainConfig& cfg, Phase phase = Phase::test,
                           int64_t batch_size = 16) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty dataset");
  EvalResult result;
  for (int64_t pos = 0; pos < int64_t(samples.size()); pos += batch_size) {
    const int64_t end = std::min<int64_t>(pos + batch_size, int64_t(samples.size()));
    std::vector<int64_t> indices;
    for (int64_t i = pos; i < end; ++i) indices.push_back(i);
    ImageBatch batch = assemble_batch(samples, indices, phase, cfg, /*epoch=*/0);
    ForwardOutput out = net.forward(batch, 0, /*with_loss=*/false);
    append_dump_records(result.records, batch, out);
  }
  result.top1 = top_k_accuracy(result.records, 1);
  return result;
}

// aligned plain-text table for the generic-class report
inline std::string format_generic_report(const std::vector<GenericClassRow>& rows) {
  std::ostringstream os;
  os << "Generic Class    Num.    Pr.(%)    FP\n";
  for (const auto& r : rows) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%-15s %6lld %9.2f %5.2f\n", r.name.c_str(),
                  (long long)r.num, r.precision, r.fp);
    os << buf;
  }
  return os.str();
}

}  // namespace herbs
