#pragma once

// Training + inference cost per UQ method, in seconds and in
// forward-equivalent network evaluations (one JVP counts as one).

#include <cstdint>
#include <string>
#include <vector>

#include "flowvar/csv.hpp"
#include "flowvar/error.hpp"

namespace flowvar {

struct MethodCost {
  std::string method;
  double train_seconds = 0.0;
  double inference_seconds = 0.0;
  std::uint64_t train_forward_equivalents = 0;  // samples pushed through the network
  std::uint64_t inference_forward_equivalents = 0;
  std::uint64_t inference_points = 0;

  [[nodiscard]] double total_seconds() const { return train_seconds + inference_seconds; }
  [[nodiscard]] std::uint64_t total_forward_equivalents() const {
    return train_forward_equivalents + inference_forward_equivalents;
  }
  [[nodiscard]] double forward_equivalents_per_point() const {
    return inference_points == 0 ? 0.0
                                  : static_cast<double>(inference_forward_equivalents) /
                                        static_cast<double>(inference_points);
  }
};

class CostLedger {
 public:
  void add_training(const std::string& method, double seconds, std::uint64_t forward_equivalents) {
    require(seconds >= 0.0, "cost seconds must be >= 0");
    MethodCost& c = entry(method);
    c.train_seconds += seconds;
    c.train_forward_equivalents += forward_equivalents;
  }

  void add_inference(const std::string& method, double seconds, std::uint64_t forward_equivalents,
                     std::uint64_t points = 1) {
    require(seconds >= 0.0, "cost seconds must be >= 0");
    MethodCost& c = entry(method);
    c.inference_seconds += seconds;
    c.inference_forward_equivalents += forward_equivalents;
    c.inference_points += points;
  }

  [[nodiscard]] const std::vector<MethodCost>& entries() const { return entries_; }

  [[nodiscard]] const MethodCost* find(const std::string& method) const {
    for (const MethodCost& c : entries_)
      if (c.method == method) return &c;
    return nullptr;
  }

 private:
  MethodCost& entry(const std::string& method) {
    for (MethodCost& c : entries_)
      if (c.method == method) return c;
    entries_.push_back({method});
    return entries_.back();
  }

  std::vector<MethodCost> entries_;  // insertion order
};

struct CostRatio {
  std::string numerator;
  std::string denominator;
  double seconds_ratio = 0.0;  // 0 when the denominator took no measurable time
  double forward_ratio = 0.0;
};

struct CostReport {
  std::vector<MethodCost> rows;
  std::vector<CostRatio> ratios;  // every ordered pair of distinct methods
};

inline CostReport cost_report(const CostLedger& ledger) {
  CostReport rep;
  rep.rows = ledger.entries();
  for (const MethodCost& a : rep.rows) {
    for (const MethodCost& b : rep.rows) {
      if (&a == &b) continue;
      CostRatio r{a.method, b.method};
      if (b.total_seconds() > 0.0) r.seconds_ratio = a.total_seconds() / b.total_seconds();
      if (b.total_forward_equivalents() > 0)
        r.forward_ratio = static_cast<double>(a.total_forward_equivalents()) /
                          static_cast<double>(b.total_forward_equivalents());
      rep.ratios.push_back(std::move(r));
    }
  }
  return rep;
}

/// Deterministic part of the report (forward-equivalent counts only).
inline CsvTable cost_table(const CostReport& rep, std::uint64_t seed) {
  CsvTable table({"train_forward_equivalents", "inference_forward_equivalents", "total_forward_equivalents",
                  "inference_points", "forward_equivalents_per_point"});
  for (const MethodCost& c : rep.rows) {
    table.add({c.method, std::nullopt, seed, std::nullopt},
              {format_number(c.train_forward_equivalents), format_number(c.inference_forward_equivalents),
               format_number(c.total_forward_equivalents()), format_number(c.inference_points),
               format_number(c.forward_equivalents_per_point())});
  }
  return table;
}

}  // namespace flowvar
