#include "rehab/telemetry.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>

namespace rehab::telemetry {
namespace {

[[noreturn]] void bad_message(const std::string& msg) { throw Error(ErrorCode::kParseError, msg); }
[[noreturn]] void rejected(const std::string& msg) { throw Error(ErrorCode::kInvalidArgument, msg); }

double num(const io::Json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_number()) bad_message(std::string("payload field '") + key + "' must be a number");
  return it->get<double>();
}

std::string str(const io::Json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) bad_message(std::string("payload field '") + key + "' must be a string");
  return it->get<std::string>();
}

bool flag(const io::Json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_boolean()) bad_message(std::string("payload field '") + key + "' must be a boolean");
  return it->get<bool>();
}

Vec3 direction_selector(const io::Json& j) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "x" || s == "+x") return Vec3::UnitX();
    if (s == "-x") return -Vec3::UnitX();
    if (s == "y" || s == "+y") return Vec3::UnitY();
    if (s == "-y") return -Vec3::UnitY();
    if (s == "z" || s == "+z") return Vec3::UnitZ();
    if (s == "-z") return -Vec3::UnitZ();
    rejected("unknown direction selector '" + s + "'");
  }
  if (j.is_array() && j.size() == 3 && j[0].is_number() && j[1].is_number() && j[2].is_number()) {
    const Vec3 v(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
    if (!v.allFinite() || v.norm() < 1e-9) rejected("direction must be a non-zero vector");
    return v.normalized();
  }
  rejected("direction must be an axis name or [x, y, z]");
}

void check_force(double v, const char* name) {
  if (!std::isfinite(v) || std::abs(v) > kMaxCommandForce) {
    rejected(std::string(name) + " force outside +/-100 N");
  }
}

}  // namespace

std::string encode(const Envelope& env) {
  io::Json j = {{"type", env.type}, {"tick", env.tick}, {"payload", env.payload}};
  return j.dump() + "\n";
}

Envelope decode(const std::string& line) {
  io::Json j = io::Json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) bad_message("message is not a JSON object");
  Envelope env;
  auto type = j.find("type");
  if (type == j.end() || !type->is_string()) bad_message("envelope lacks a string 'type'");
  env.type = type->get<std::string>();
  if (auto tick = j.find("tick"); tick != j.end()) {
    if (!tick->is_number_unsigned()) bad_message("envelope 'tick' must be a non-negative integer");
    env.tick = tick->get<std::uint64_t>();
  }
  if (auto payload = j.find("payload"); payload != j.end()) {
    if (!payload->is_object()) bad_message("envelope 'payload' must be an object");
    env.payload = *payload;
  }
  return env;
}

bool SessionSnapshot::operator==(const SessionSnapshot& o) const {
  auto same_pose = [](const Pose& a, const Pose& b) {
    return a.position() == b.position() && a.orientation().coeffs() == b.orientation().coeffs();
  };
  return tick == o.tick && time == o.time && progress == o.progress && s == o.s && modality == o.modality &&
         safety_mode == o.safety_mode && halted == o.halted && paused == o.paused && f_t == o.f_t &&
         f_o_norm == o.f_o_norm && deviation == o.deviation && corridor_mu == o.corridor_mu &&
         corridor_sigma == o.corridor_sigma && n_sigma == o.n_sigma && same_pose(pose_ref, o.pose_ref) &&
         same_pose(tcp, o.tcp);
}

SessionSnapshot project(const sim::TraceRecord& rec, const std::string& modality, double n_sigma, bool paused) {
  SessionSnapshot s;
  s.tick = rec.tick;
  s.time = rec.time;
  s.progress = rec.progress;
  s.s = rec.s;
  s.modality = modality;
  s.safety_mode = std::string(safety::to_string(rec.safety_mode));
  s.halted = rec.halted;
  s.paused = paused;
  s.f_t = rec.f_t;
  s.f_o_norm = rec.f_o.norm();
  s.deviation = rec.deviation;
  s.corridor_mu = rec.corridor_mu;
  s.corridor_sigma = rec.corridor_sigma;
  s.n_sigma = n_sigma;
  s.pose_ref = rec.pose_ref;
  s.tcp = rec.tcp;
  return s;
}

io::Json snapshot_to_json(const SessionSnapshot& s) {
  return {{"tick", s.tick},
          {"time", s.time},
          {"progress", s.progress},
          {"s", s.s},
          {"mode", {{"modality", s.modality}, {"safety", s.safety_mode}, {"halted", s.halted}, {"paused", s.paused}}},
          {"f_t", s.f_t},
          {"f_o_norm", s.f_o_norm},
          {"deviation", s.deviation},
          {"corridor", {{"mu", s.corridor_mu}, {"sigma", s.corridor_sigma}, {"n_sigma", s.n_sigma}}},
          {"pose_ref", io::pose_to_json(s.pose_ref)},
          {"tcp", io::pose_to_json(s.tcp)}};
}

SessionSnapshot snapshot_from_json(const io::Json& j) {
  if (!j.is_object()) bad_message("snapshot must be an object");
  SessionSnapshot s;
  auto tick = j.find("tick");
  if (tick == j.end() || !tick->is_number_unsigned()) bad_message("snapshot 'tick' must be an integer");
  s.tick = tick->get<std::uint64_t>();
  s.time = num(j, "time");
  s.progress = num(j, "progress");
  s.s = num(j, "s");
  auto mode = j.find("mode");
  if (mode == j.end() || !mode->is_object()) bad_message("snapshot lacks 'mode'");
  s.modality = str(*mode, "modality");
  s.safety_mode = str(*mode, "safety");
  s.halted = flag(*mode, "halted");
  s.paused = flag(*mode, "paused");
  s.f_t = num(j, "f_t");
  s.f_o_norm = num(j, "f_o_norm");
  s.deviation = num(j, "deviation");
  auto corridor = j.find("corridor");
  if (corridor == j.end() || !corridor->is_object()) bad_message("snapshot lacks 'corridor'");
  s.corridor_mu = num(*corridor, "mu");
  s.corridor_sigma = num(*corridor, "sigma");
  s.n_sigma = num(*corridor, "n_sigma");
  try {
    s.pose_ref = io::pose_from_json(j.at("pose_ref"), "pose_ref");
    s.tcp = io::pose_from_json(j.at("tcp"), "tcp");
  } catch (const io::Json::exception& e) {
    bad_message(std::string("snapshot pose: ") + e.what());
  } catch (const Error& e) {
    bad_message(e.what());
  }
  return s;
}

std::string command_type(const SessionCommand& cmd) {
  struct V {
    std::string operator()(const SetForce&) const { return "set_force"; }
    std::string operator()(const SetModality&) const { return "set_modality"; }
    std::string operator()(const Pause&) const { return "pause"; }
    std::string operator()(const Resume&) const { return "resume"; }
    std::string operator()(const Estop&) const { return "estop"; }
    std::string operator()(const Reset&) const { return "reset"; }
  };
  return std::visit(V{}, cmd);
}

io::Json command_payload(const SessionCommand& cmd) {
  io::Json p = io::Json::object();
  if (const auto* f = std::get_if<SetForce>(&cmd)) {
    p["tangential"] = f->tangential;
    p["orthogonal"] = f->orthogonal;
    p["direction"] = io::Json::array({f->direction.x(), f->direction.y(), f->direction.z()});
  } else if (const auto* m = std::get_if<SetModality>(&cmd)) {
    if (m->mode) p["mode"] = std::string(tunnel::to_string(*m->mode));
    if (m->gamma) p["gamma"] = *m->gamma;
    if (m->epsilon) p["epsilon"] = *m->epsilon;
  }
  return p;
}

SessionCommand parse_command(const Envelope& env) {
  const auto& p = env.payload;
  if (env.type == "set_force") {
    SetForce f;
    if (p.contains("tangential")) f.tangential = num(p, "tangential");
    if (p.contains("orthogonal")) f.orthogonal = num(p, "orthogonal");
    if (p.contains("direction")) f.direction = direction_selector(p["direction"]);
    check_force(f.tangential, "tangential");
    check_force(f.orthogonal, "orthogonal");
    return f;
  }
  if (env.type == "set_modality") {
    SetModality m;
    if (p.contains("mode")) {
      try {
        m.mode = tunnel::modality_from_string(str(p, "mode"));
      } catch (const Error& e) {
        rejected(e.what());
      }
    }
    if (p.contains("gamma")) m.gamma = num(p, "gamma");
    if (p.contains("epsilon")) m.epsilon = num(p, "epsilon");
    if (!m.mode && !m.gamma && !m.epsilon) rejected("set_modality needs a mode, gamma or epsilon");
    if (m.gamma && !(*m.gamma >= 0.0 && std::isfinite(*m.gamma))) rejected("gamma must be >= 0");
    if (m.epsilon && !(*m.epsilon >= 0.0 && std::isfinite(*m.epsilon))) rejected("epsilon must be >= 0");
    if (m.mode == tunnel::Modality::kPassive && m.gamma && *m.gamma != 0.0) rejected("passive modality requires gamma = 0");
    return m;
  }
  if (env.type == "pause") return Pause{};
  if (env.type == "resume") return Resume{};
  if (env.type == "estop") return Estop{};
  if (env.type == "reset") return Reset{};
  rejected("unknown command '" + env.type + "'");
}

Session::Session(const sim::Scenario& scenario, int decimation) : loop_(scenario), decimation_(decimation) {
  if (decimation < 1) throw Error(ErrorCode::kInvalidArgument, "snapshot decimation must be >= 1");
}

void Session::post(const SessionCommand& cmd, double now) {
  std::lock_guard lock(mailbox_mutex_);
  mailbox_.push_back(cmd);
  if (std::holds_alternative<SetForce>(cmd)) last_command_time_ = now;
}

void Session::disconnect() {
  std::lock_guard lock(mailbox_mutex_);
  disconnect_pending_ = true;
}

void Session::apply(const SessionCommand& cmd) {
  if (const auto* f = std::get_if<SetForce>(&cmd)) {
    force_ = *f;
    have_force_ = true;
  } else if (const auto* m = std::get_if<SetModality>(&cmd)) {
    tunnel::ModalityParams p = m->mode ? tunnel::modality_preset(*m->mode) : loop_.params();
    if (m->gamma) p.gamma = *m->gamma;
    if (m->epsilon) p.epsilon = *m->epsilon;
    try {
      loop_.set_modality(p);
    } catch (const Error&) {
      // Inconsistent combination (e.g. gamma on passive); keep the current gains.
    }
  } else if (std::holds_alternative<Pause>(cmd)) {
    paused_ = true;
  } else if (std::holds_alternative<Resume>(cmd)) {
    paused_ = false;
  } else if (std::holds_alternative<Estop>(cmd)) {
    estop_ = true;
  } else if (std::holds_alternative<Reset>(cmd)) {
    loop_.reset();
    history_.clear();
    estop_ = false;
    paused_ = false;
    have_force_ = false;
    force_ = SetForce{};
  }
}

std::optional<SessionSnapshot> Session::step(double now) {
  std::vector<SessionCommand> cmds;
  bool dropped = false;
  double last_force = -1.0;
  {
    std::lock_guard lock(mailbox_mutex_);
    cmds.swap(mailbox_);
    dropped = disconnect_pending_;
    disconnect_pending_ = false;
    last_force = last_command_time_;
  }
  for (const auto& c : cmds) apply(c);
  if (dropped) have_force_ = false;
  const bool fresh = have_force_ && last_force >= 0.0 && now - last_force <= kCommandTimeout;

  sim::TickInput in;
  in.halt = estop_;
  in.hold = paused_;
  Vec3 f = Vec3::Zero();
  if (fresh) {
    const Vec3 u = loop_.controller().last_tangent;
    Vec3 ortho = force_.direction - force_.direction.dot(u) * u;
    ortho = ortho.norm() > 1e-9 ? Vec3(ortho.normalized()) : Vec3::Zero();
    f = force_.tangential * u + force_.orthogonal * ortho;
  }
  in.force_body = f;
  const auto& rec = loop_.tick(in);
  history_.push_back(rec);
  if (rec.tick % static_cast<std::uint64_t>(decimation_) != 0) return std::nullopt;
  return current_snapshot();
}

SessionSnapshot Session::current_snapshot() const {
  return project(loop_.last(), std::string(tunnel::to_string(loop_.params().mode)), loop_.scenario().safety.n_sigma,
                 paused_);
}

Server::Server(Session& session, int port) : session_(session) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw Error(ErrorCode::kConfigError, std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0 || ::listen(listen_fd_, 1) < 0) {
    const std::string err = std::strerror(errno);
    ::close(listen_fd_);
    throw Error(ErrorCode::kConfigError, "cannot listen on port " + std::to_string(port) + ": " + err);
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  clock_origin_ = now();
  acceptor_ = std::thread([this] { accept_loop(); });
}

Server::~Server() {
  running_ = false;
  if (acceptor_.joinable()) acceptor_.join();
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

double Server::now() const {
  using namespace std::chrono;
  return duration<double>(steady_clock::now().time_since_epoch()).count() - clock_origin_;
}

void Server::send_line(const std::string& line, bool droppable) {
  std::lock_guard lock(send_mutex_);
  const int fd = client_fd_;
  if (fd < 0) return;
  std::size_t sent = 0;
  while (sent < line.size()) {
    const int flags = MSG_NOSIGNAL | (droppable && sent == 0 ? MSG_DONTWAIT : 0);
    const ssize_t n = ::send(fd, line.data() + sent, line.size() - sent, flags);
    if (n < 0) {
      if (errno == EINTR) continue;
      return;  // EAGAIN on a droppable snapshot, or a dead link
    }
    sent += static_cast<std::size_t>(n);
  }
}

void Server::accept_loop() {
  while (running_) {
    pollfd pfd{listen_fd_, POLLIN, 0};
    if (::poll(&pfd, 1, 100) <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    serve_client(fd);
  }
}

void Server::serve_client(int fd) {
  {
    std::lock_guard lock(send_mutex_);
    client_fd_ = fd;
  }
  const std::uint64_t tick = session_.loop().ticks();
  io::Json hello = {{"protocol", kProtocolName},
                    {"version", kProtocolVersion},
                    {"dt", session_.dt()},
                    {"decimation", session_.decimation()}};
  send_line(encode({"hello", tick, hello}), false);

  auto reply_error = [&](const std::string& code, const std::string& message) {
    send_line(encode({"error", session_.loop().ticks(), {{"code", code}, {"message", message}}}), false);
  };

  std::string buffer;
  bool handshaken = false;
  bool open = true;
  char chunk[4096];
  while (running_ && open) {
    pollfd pfd{fd, POLLIN, 0};
    if (::poll(&pfd, 1, 100) <= 0) continue;
    const ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
    if (n <= 0) break;
    buffer.append(chunk, static_cast<std::size_t>(n));
    std::size_t nl;
    while ((nl = buffer.find('\n')) != std::string::npos) {
      const std::string line = buffer.substr(0, nl);
      buffer.erase(0, nl + 1);
      if (line.empty()) continue;
      try {
        const Envelope env = decode(line);
        if (!handshaken) {
          if (env.type != "hello") {
            reply_error("handshake-required", "send hello first");
            continue;
          }
          const auto v = env.payload.find("version");
          if (v == env.payload.end() || !v->is_number_integer() || v->get<int>() != kProtocolVersion) {
            reply_error("version-mismatch", "server speaks version " + std::to_string(kProtocolVersion));
            open = false;
            break;
          }
          handshaken = true;
          client_ready_ = true;
          send_line(encode({"ready", session_.loop().ticks(), io::Json::object()}), false);
          continue;
        }
        const SessionCommand cmd = parse_command(env);
        session_.post(cmd, now());
        send_line(encode({"ack", session_.loop().ticks(), {{"command", env.type}}}), false);
      } catch (const Error& e) {
        reply_error(e.code() == ErrorCode::kParseError ? "bad-message" : "rejected", e.what());
      }
    }
  }
  client_ready_ = false;
  {
    std::lock_guard lock(send_mutex_);
    client_fd_ = -1;
  }
  session_.disconnect();
  ::close(fd);
}

void Server::run(std::uint64_t max_ticks) {
  using clock = std::chrono::steady_clock;
  const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(session_.dt()));
  auto next = clock::now();
  std::uint64_t count = 0;
  while (running_ && (max_ticks == 0 || count < max_ticks)) {
    const auto snap = session_.step(now());
    if (snap && client_ready_) send_line(encode({"snapshot", snap->tick, snapshot_to_json(*snap)}), true);
    ++count;
    next += period;
    std::this_thread::sleep_until(next);
  }
  running_ = false;
}

}  // namespace rehab::telemetry
