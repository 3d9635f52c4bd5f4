#ifndef VNE_SIMKERNEL_HPP_
#define VNE_SIMKERNEL_HPP_

#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vne/embedding.hpp"
#include "vne/netmodel.hpp"

namespace vne {

// Online embedding strategy. On acceptance the returned solution's
// reservations must already be applied to state; on rejection state must be
// left exactly as it was.
class Solver {
 public:
  virtual ~Solver() = default;
  virtual std::optional<EmbeddingSolution> solve(SubstrateState& state, const VirtualNetworkRequest& vnr) = 0;
  virtual std::string name() const = 0;
};

class RejectAllSolver : public Solver {
 public:
  std::optional<EmbeddingSolution> solve(SubstrateState&, const VirtualNetworkRequest&) override { return std::nullopt; }
  std::string name() const override { return "reject-all"; }
};

class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class EventKind { arrival, departure };

struct SimEvent {
  double time = 0.0;
  EventKind kind = EventKind::arrival;
  int vnr_index = 0;  // position in the input stream
};

struct EventRecord {
  double time = 0.0;
  EventKind kind = EventKind::arrival;
  int vnr_id = 0;
  int size = 0;
  bool accepted = false;
  double r2c = 0.0;
  double running_rac = 0.0;
  double running_lar = 0.0;
  double running_lt_r2c = 0.0;
};

struct Decision {
  double time = 0.0;
  int vnr_id = 0;
  std::optional<EmbeddingSolution> solution;
  double revenue = 0.0;
  double cost = 0.0;
  double r2c = 0.0;
};

struct MetricsLedger {
  int arrived_count = 0;
  int accepted_count = 0;
  double revenue_weighted_sum = 0.0;  // sum of REV * lifetime over accepted VNRs
  double cost_weighted_sum = 0.0;
  double horizon = 0.0;
  std::vector<EventRecord> per_event_log;
  std::vector<Decision> decisions;
};

class MetricUndefined : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

double rac(const MetricsLedger& ledger);
double lar(const MetricsLedger& ledger);
double lt_r2c(const MetricsLedger& ledger);

struct SimulationOptions {
  // Re-verify every accepted solution against all concurrently held ones.
  bool verify = true;
  // Called after every processed event with the live substrate.
  std::function<void(const SimEvent&, const SubstrateState&)> observer;
};

// Event-by-event driver. The network, stream and solver must outlive it.
class Simulator {
 public:
  Simulator(const PhysicalNetwork& pn, const std::vector<VirtualNetworkRequest>& vnrs, Solver& solver,
            SimulationOptions options = {});
  ~Simulator();
  Simulator(const Simulator&) = delete;
  Simulator& operator=(const Simulator&) = delete;

  bool done() const;
  SimEvent step();
  // Processes events until `count` more arrivals were handled or the stream
  // ends; returns the number of arrivals handled.
  int run_arrivals(int count);
  const SubstrateState& state() const;
  const MetricsLedger& ledger() const;
  // Runs to the end, checks that the substrate is restored and hands over
  // the ledger.
  MetricsLedger finish();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

MetricsLedger run_simulation(const PhysicalNetwork& pn, const std::vector<VirtualNetworkRequest>& vnrs, Solver& solver,
                             const SimulationOptions& options = {});

inline constexpr const char* kMetricsCsvHeader =
    "event_time,event,vnr_id,size,accepted,r2c,running_rac,running_lar,running_lt_r2c";
inline constexpr const char* kMetricsCsvSchema = "# vne-lab metrics-csv v1";

// Schema line, header, one row per event and a final "summary" row.
void write_metrics_csv(const MetricsLedger& ledger, std::ostream& out);
// One JSON object per VNR decision.
void write_solution_dump(const MetricsLedger& ledger, const PhysicalNetwork& pn, std::ostream& out);

}  // namespace vne

#endif  // VNE_SIMKERNEL_HPP_
