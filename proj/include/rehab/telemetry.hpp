#pragma once

#include <atomic>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "rehab/io.hpp"
#include "rehab/patient_sim.hpp"

namespace rehab::telemetry {

inline constexpr int kProtocolVersion = 1;
inline constexpr const char* kProtocolName = "rehab-session";
inline constexpr double kMaxCommandForce = 100.0;  // N
inline constexpr double kCommandTimeout = 0.2;      // s without commands before the force drops to zero
inline constexpr int kDefaultDecimation = 5;        // 100 Hz loop -> 20 Hz snapshots

struct Envelope {
  std::string type;
  std::uint64_t tick = 0;
  io::Json payload = io::Json::object();
};

/// One line of JSON, newline terminated.
std::string encode(const Envelope& env);
/// Throws parse-error on malformed lines or a missing/ill-typed envelope field.
Envelope decode(const std::string& line);

struct SessionSnapshot {
  std::uint64_t tick = 0;
  double time = 0.0;
  double progress = 0.0;
  double s = 1.0;
  std::string modality;
  std::string safety_mode;
  bool halted = false;
  bool paused = false;
  double f_t = 0.0;
  double f_o_norm = 0.0;
  double deviation = 0.0;
  double corridor_mu = 0.0;
  double corridor_sigma = 0.0;
  double n_sigma = 5.0;
  Pose pose_ref;
  Pose tcp;

  bool operator==(const SessionSnapshot& o) const;
};

SessionSnapshot project(const sim::TraceRecord& rec, const std::string& modality, double n_sigma, bool paused);
io::Json snapshot_to_json(const SessionSnapshot& snap);
SessionSnapshot snapshot_from_json(const io::Json& j);

struct SetForce {
  double tangential = 0.0;  // N
  double orthogonal = 0.0;  // N
  Vec3 direction = Vec3::UnitZ();  // body frame, projected off the tangent
};
struct SetModality {
  std::optional<tunnel::Modality> mode;
  std::optional<double> gamma;
  std::optional<double> epsilon;
};
struct Pause {};
struct Resume {};
struct Estop {};
struct Reset {};

using SessionCommand = std::variant<SetForce, SetModality, Pause, Resume, Estop, Reset>;

std::string command_type(const SessionCommand& cmd);
io::Json command_payload(const SessionCommand& cmd);
/// Validates bounds (|force| <= 100 N, known selectors); throws invalid-argument.
SessionCommand parse_command(const Envelope& env);

/// Live control loop. Commands are queued from any thread and applied in
/// arrival order at the start of the next tick.
class Session {
 public:
  explicit Session(const sim::Scenario& scenario, int decimation = kDefaultDecimation);

  void post(const SessionCommand& cmd, double now);
  /// The link dropped: the force input goes to zero on the next tick.
  void disconnect();

  /// Advances one tick at wall-clock `now` (s). Returns a snapshot on
  /// publishing ticks (every `decimation` ticks).
  std::optional<SessionSnapshot> step(double now);

  const sim::SimLoop& loop() const { return loop_; }
  bool estopped() const { return estop_; }
  bool paused() const { return paused_; }
  int decimation() const { return decimation_; }
  double dt() const { return loop_.scenario().dt; }
  /// Every record produced since construction or the last reset.
  const std::vector<sim::TraceRecord>& history() const { return history_; }
  SessionSnapshot current_snapshot() const;

 private:
  void apply(const SessionCommand& cmd);

  sim::SimLoop loop_;
  int decimation_;
  std::mutex mailbox_mutex_;
  std::vector<SessionCommand> mailbox_;
  bool disconnect_pending_ = false;
  double last_command_time_ = -1.0;

  SetForce force_;
  bool have_force_ = false;
  bool paused_ = false;
  bool estop_ = false;
  std::vector<sim::TraceRecord> history_;
};

/// TCP front end: one client at a time, newline-delimited envelopes.
class Server {
 public:
  Server(Session& session, int port);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Bound port (useful with port 0).
  int port() const { return port_; }

  /// Runs the real-time loop until `stop()` or `max_ticks` (0 = unbounded).
  void run(std::uint64_t max_ticks = 0);
  void stop() { running_ = false; }

 private:
  void accept_loop();
  void serve_client(int fd);
  void send_line(const std::string& line, bool droppable);

  Session& session_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> running_{true};
  std::atomic<int> client_fd_{-1};
  std::atomic<bool> client_ready_{false};
  std::mutex send_mutex_;
  std::thread acceptor_;
  double clock_origin_ = 0.0;
  double now() const;
};

}  // namespace rehab::telemetry
