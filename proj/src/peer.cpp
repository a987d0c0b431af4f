#include "mmp/peer.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>

#include "mmp/error.hpp"

namespace mmp {
namespace {

using json = nlohmann::json;

constexpr int kPollMs = 50;
constexpr std::size_t kMaxLine = 4u << 20;

void close_fd(int& fd) {
  if (fd >= 0) ::close(fd);
  fd = -1;
}

bool send_all(int fd, std::string_view bytes) {
  while (!bytes.empty()) {
    const auto n = ::send(fd, bytes.data(), bytes.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    bytes.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

void set_timeouts(int fd, int timeout_ms) {
  timeval tv{timeout_ms / 1000, (timeout_ms % 1000) * 1000};
  ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
}

// Nonblocking connect bounded by `timeout_ms`; returns a blocking fd or -1.
int connect_tcp(const Endpoint& ep, int timeout_ms) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(ep.host.c_str(), std::to_string(ep.port).c_str(), &hints, &res) != 0) return -1;
  int fd = -1;
  for (auto* ai = res; ai && fd < 0; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC | SOCK_NONBLOCK, ai->ai_protocol);
    if (fd < 0) continue;
    int rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
    if (rc != 0 && errno == EINPROGRESS) {
      pollfd p{fd, POLLOUT, 0};
      rc = ::poll(&p, 1, timeout_ms) == 1 ? 0 : -1;
      int err = 0;
      socklen_t len = sizeof err;
      if (rc == 0 && (::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len) != 0 || err != 0)) rc = -1;
    }
    if (rc != 0) {
      close_fd(fd);
      continue;
    }
    ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) & ~O_NONBLOCK);
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    set_timeouts(fd, 1000);
  }
  ::freeaddrinfo(res);
  return fd;
}

int listen_tcp(const Endpoint& ep, std::uint16_t& bound_port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  if (int rc = ::getaddrinfo(ep.host.c_str(), std::to_string(ep.port).c_str(), &hints, &res); rc != 0) {
    throw Error(ErrorCode::BindFailure, std::string("cannot resolve listen address: ") + ::gai_strerror(rc),
                ep.to_string());
  }
  int fd = -1;
  std::string why = "no usable address";
  for (auto* ai = res; ai && fd < 0; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd, ai->ai_addr, ai->ai_addrlen) != 0 || ::listen(fd, 64) != 0) {
      why = std::strerror(errno);
      close_fd(fd);
    }
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw Error(ErrorCode::BindFailure, "cannot listen: " + why, ep.to_string());
  sockaddr_storage ss{};
  socklen_t len = sizeof ss;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&ss), &len);
  bound_port = ntohs(ss.ss_family == AF_INET6 ? reinterpret_cast<sockaddr_in6*>(&ss)->sin6_port
                                              : reinterpret_cast<sockaddr_in*>(&ss)->sin_port);
  return fd;
}

std::string hello_line(const NodeId& id) { return json{{"type", "hello"}, {"node", id}}.dump() + "\n"; }

std::optional<NodeId> parse_hello(const std::string& line) {
  auto j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object() || j.value("type", "") != "hello") return std::nullopt;
  if (!j.contains("node") || !j["node"].is_string()) return std::nullopt;
  return j["node"].get<std::string>();
}

sockaddr_un unix_address(const std::filesystem::path& path) {
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  const auto s = path.string();
  if (s.size() >= sizeof addr.sun_path) {
    throw Error(ErrorCode::InvalidConfig, "control socket path too long", "controlSocket");
  }
  std::memcpy(addr.sun_path, s.c_str(), s.size() + 1);
  return addr;
}

int connect_unix(const std::filesystem::path& path) {
  const auto addr = unix_address(path);
  int fd = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) return -1;
  if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) close_fd(fd);
  return fd;
}

// Reads up to and excluding '\n'. False on EOF, error or oversize.
bool read_line(int fd, std::string& buffer, std::string& line) {
  for (;;) {
    if (auto nl = buffer.find('\n'); nl != std::string::npos) {
      line = buffer.substr(0, nl);
      buffer.erase(0, nl + 1);
      return true;
    }
    if (buffer.size() > kMaxLine) return false;
    char chunk[8192];
    const auto n = ::recv(fd, chunk, sizeof chunk, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    buffer.append(chunk, static_cast<std::size_t>(n));
  }
}

}  // namespace

Timestamp wall_clock_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

// ---------------------------------------------------------------------------
// Peer

Peer::Peer(PeerConfig config, MeshMem mem) : config_(std::move(config)), node_(std::move(mem)) {
  for (const auto& ref : config_.peers) {
    auto& stats = node_.peer(ref.id);
    stats.address = ref.address.to_string();
    links_.push_back(Link{.ref = ref, .backoff_ms = config_.reconnect_initial_ms});
  }
}

std::unique_ptr<Peer> Peer::start(PeerConfig config) {
  auto mem = MeshMem::load(config.store);
  std::unique_ptr<Peer> peer(new Peer(std::move(config), std::move(mem)));
  peer->listen_fd_ = listen_tcp(peer->config_.listen, peer->bound_port_);
  peer->owner_ = std::thread([p = peer.get()] { p->owner_loop(); });
  peer->owner_id_ = peer->owner_.get_id();
  peer->acceptor_ = std::thread([p = peer.get()] { p->accept_loop(); });
  peer->dialer_ = std::thread([p = peer.get()] { p->dial_loop(); });
  return peer;
}

Peer::~Peer() { shutdown(); }

void Peer::shutdown() {
  if (!running_.exchange(false)) return;
  queue_cv_.notify_all();
  if (acceptor_.joinable()) acceptor_.join();
  if (dialer_.joinable()) dialer_.join();
  {
    std::lock_guard lock(net_mu_);
    for (int fd : inbound_fds_) ::shutdown(fd, SHUT_RDWR);
  }
  {
    std::lock_guard lock(threads_mu_);
    for (auto& t : readers_) {
      if (t.joinable()) t.join();
    }
    readers_.clear();
  }
  if (owner_.joinable()) owner_.join();
  std::lock_guard lock(net_mu_);
  for (auto& link : links_) close_fd(link.fd);
  close_fd(listen_fd_);
}

void Peer::post(std::function<void()> task) {
  {
    std::lock_guard lock(queue_mu_);
    queue_.push_back(std::move(task));
  }
  queue_cv_.notify_one();
}

template <typename F>
auto Peer::on_owner(F&& fn) -> decltype(fn()) {
  using R = decltype(fn());
  if (std::this_thread::get_id() == owner_id_) return fn();
  if (!running_) throw Error(ErrorCode::TransportError, "peer is shut down");
  auto task = std::make_shared<std::packaged_task<R()>>(std::forward<F>(fn));
  auto fut = task->get_future();
  post([task] { (*task)(); });
  return fut.get();
}

void Peer::owner_loop() {
  for (;;) {
    std::function<void()> task;
    {
      std::unique_lock lock(queue_mu_);
      queue_cv_.wait(lock, [this] { return !queue_.empty() || !running_; });
      if (queue_.empty()) return;
      task = std::move(queue_.front());
      queue_.pop_front();
    }
    task();
  }
}

void Peer::accept_loop() {
  while (running_) {
    pollfd p{listen_fd_, POLLIN, 0};
    if (::poll(&p, 1, kPollMs) <= 0) continue;
    int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) continue;
    {
      std::lock_guard lock(net_mu_);
      inbound_fds_.push_back(fd);
    }
    std::lock_guard lock(threads_mu_);
    readers_.emplace_back([this, fd] { read_loop(fd); });
  }
}

void Peer::read_loop(int fd) {
  std::string buffer;
  std::string line;
  NodeId from = "unknown";
  bool first = true;
  while (running_) {
    pollfd p{fd, POLLIN, 0};
    const int rc = ::poll(&p, 1, kPollMs);
    if (rc == 0) continue;
    if (rc < 0 && errno == EINTR) continue;
    if (rc < 0 || !read_line(fd, buffer, line)) break;
    for (bool more = true; more;) {
      if (first) {
        first = false;
        if (auto id = parse_hello(line)) {
          from = *id;
        } else {
          handle_frame(line, from);
        }
      } else {
        handle_frame(line, from);
      }
      // Drain complete lines already buffered before polling again.
      more = buffer.find('\n') != std::string::npos && read_line(fd, buffer, line);
    }
  }
  std::lock_guard lock(net_mu_);
  std::erase(inbound_fds_, fd);
  ::close(fd);
}

void Peer::handle_frame(const std::string& line, const NodeId& from) {
  if (line.empty()) return;
  post([this, line, from] {
    auto result = node_.on_frame(line, from, wall_clock_ms());
    if (config_.relay_remixes && result.outcome && result.outcome->kind == ReceiveKind::stored) {
      broadcast_line(encode_frame(result.outcome->entry->cmb, wall_clock_ms()), std::nullopt);
    }
  });
}

void Peer::inject_frame(std::string line, NodeId from) { handle_frame(line, from); }

void Peer::drop_link(Link& link) {
  close_fd(link.fd);
  link.next_attempt = wall_clock_ms() + link.backoff_ms;
}

void Peer::dial_loop() {
  while (running_) {
    std::vector<std::size_t> due;
    {
      std::lock_guard lock(net_mu_);
      const auto now = wall_clock_ms();
      for (std::size_t i = 0; i < links_.size(); ++i) {
        auto& link = links_[i];
        if (link.fd >= 0) {
          // Outbound links are write-only; readable means the far end closed.
          pollfd p{link.fd, POLLIN, 0};
          if (::poll(&p, 1, 0) > 0) {
            char c;
            if (::recv(link.fd, &c, 1, MSG_DONTWAIT) <= 0) drop_link(link);
          }
        } else if (now >= link.next_attempt) {
          due.push_back(i);
        }
      }
    }
    for (auto i : due) {
      Endpoint ep;
      {
        std::lock_guard lock(net_mu_);
        ep = links_[i].ref.address;
      }
      int fd = connect_tcp(ep, 500);
      if (fd >= 0 && !send_all(fd, hello_line(config_.node_id()))) close_fd(fd);
      std::lock_guard lock(net_mu_);
      auto& link = links_[i];
      if (fd >= 0) {
        link.fd = fd;
        link.backoff_ms = config_.reconnect_initial_ms;
      } else {
        link.next_attempt = wall_clock_ms() + link.backoff_ms;
        link.backoff_ms = std::min(link.backoff_ms * 2, config_.reconnect_max_ms);
      }
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(kPollMs));
  }
}

DeliveryReport Peer::broadcast_line(const std::string& line, const std::optional<NodeId>& to) {
  DeliveryReport report;
  const auto payload = line + "\n";
  std::lock_guard lock(net_mu_);
  for (auto& link : links_) {
    if (link.ref.id == config_.node_id()) continue;
    if (to && link.ref.id != *to) continue;
    Delivery d{.peer = link.ref.id};
    if (link.fd < 0) {
      d.error = "not connected";
    } else if (!send_all(link.fd, payload)) {
      d.error = std::string("send failed: ") + std::strerror(errno);
      drop_link(link);
    } else {
      d.ok = true;
    }
    if (d.ok) {
      ++link.frames_out;
    } else {
      ++link.send_failures;
    }
    report.push_back(std::move(d));
  }
  return report;
}

DeliveryReport Peer::broadcast(const Cmb& cmb, const std::optional<NodeId>& to) {
  return on_owner([&] { return broadcast_line(encode_frame(cmb, wall_clock_ms()), to); });
}

ObserveResult Peer::observe(const FieldTexts& texts, Mood mood, Body body, const std::optional<NodeId>& to) {
  if (to && std::none_of(config_.peers.begin(), config_.peers.end(), [&](const PeerRef& p) { return p.id == *to; })) {
    throw Error(ErrorCode::InvalidArgument, "not a configured peer", *to);
  }
  return on_owner([&] {
    const auto now = wall_clock_ms();
    ObserveResult r{.entry = node_.store().observe(texts, mood, std::move(body), now)};
    r.delivery = broadcast_line(encode_frame(r.entry.cmb, now), to);
    return r;
  });
}

std::vector<StoredEntry> Peer::recall(const FieldTexts& query, std::size_t limit) {
  return on_owner([&] { return node_.store().recall(query, limit); });
}

StoredEntry Peer::fetch(const CmbKey& key) {
  return on_owner([&] { return node_.store().fetch(key); });
}

std::vector<PeerStatus> Peer::peers() {
  return on_owner([&] {
    std::vector<PeerStatus> out;
    std::lock_guard lock(net_mu_);
    for (const auto& link : links_) {
      auto s = node_.peer(link.ref.id);
      s.connected = link.fd >= 0;
      s.frames_out = link.frames_out;
      s.send_failures = link.send_failures;
      out.push_back(std::move(s));
    }
    for (const auto& [id, s] : node_.peers()) {
      if (std::none_of(links_.begin(), links_.end(), [&](const Link& l) { return l.ref.id == id; })) {
        out.push_back(s);
      }
    }
    return out;
  });
}

json Peer::status() {
  auto table = peers();
  return on_owner([&] {
    json peers_j = json::array();
    DropCounts total;
    for (const auto& p : table) {
      peers_j.push_back(to_json(p));
      total += p.drops;
    }
    return json{{"node", config_.node_id()},
                {"role", config_.store.role()},
                {"listen", config_.listen.host + ":" + std::to_string(bound_port_)},
                {"storeSize", node_.store().size()},
                {"drops", to_json(total)},
                {"peers", std::move(peers_j)}};
  });
}

std::size_t Peer::store_size() {
  return on_owner([&] { return node_.store().size(); });
}

DropCounts Peer::total_drops() {
  return on_owner([&] { return node_.total_drops(); });
}

// ---------------------------------------------------------------------------
// One-shot operation without a daemon

DeliveryReport deliver_direct(const PeerConfig& config, const std::string& line, const std::optional<NodeId>& to,
                              int timeout_ms) {
  DeliveryReport report;
  for (const auto& ref : config.peers) {
    if (to && ref.id != *to) continue;
    Delivery d{.peer = ref.id};
    int fd = connect_tcp(ref.address, timeout_ms);
    if (fd < 0) {
      d.error = "connect failed";
    } else if (!send_all(fd, hello_line(config.node_id()) + line + "\n")) {
      d.error = std::string("send failed: ") + std::strerror(errno);
    } else {
      d.ok = true;
    }
    close_fd(fd);
    report.push_back(std::move(d));
  }
  return report;
}

OfflineService::OfflineService(PeerConfig config)
    : config_(std::move(config)), mem_(MeshMem::load(config_.store)) {}

ObserveResult OfflineService::observe(const FieldTexts& texts, Mood mood, Body body,
                                      const std::optional<NodeId>& to) {
  if (to && std::none_of(config_.peers.begin(), config_.peers.end(), [&](const PeerRef& p) { return p.id == *to; })) {
    throw Error(ErrorCode::InvalidArgument, "not a configured peer", *to);
  }
  const auto now = wall_clock_ms();
  ObserveResult r{.entry = mem_.observe(texts, mood, std::move(body), now)};
  r.delivery = deliver_direct(config_, encode_frame(r.entry.cmb, now), to);
  return r;
}

std::vector<StoredEntry> OfflineService::recall(const FieldTexts& query, std::size_t limit) {
  return mem_.recall(query, limit);
}

StoredEntry OfflineService::fetch(const CmbKey& key) { return mem_.fetch(key); }

std::vector<PeerStatus> OfflineService::peers() {
  std::vector<PeerStatus> out;
  for (const auto& ref : config_.peers) out.push_back(PeerStatus{.id = ref.id, .address = ref.address.to_string()});
  return out;
}

json OfflineService::status() {
  json peers_j = json::array();
  for (const auto& p : peers()) peers_j.push_back(to_json(p));
  return json{{"node", config_.node_id()},
              {"role", config_.store.role()},
              {"daemon", false},
              {"storeSize", mem_.size()},
              {"drops", to_json(DropCounts{})},
              {"peers", std::move(peers_j)}};
}

// ---------------------------------------------------------------------------
// Control socket

bool control_socket_live(const std::filesystem::path& path) {
  int fd = connect_unix(path);
  const bool live = fd >= 0;
  close_fd(fd);
  return live;
}

ControlServer::ControlServer(MeshService& service, std::filesystem::path path)
    : service_(service), path_(std::move(path)) {
  if (control_socket_live(path_)) {
    throw Error(ErrorCode::BindFailure, "control socket already served by another daemon", path_.string());
  }
  ::unlink(path_.c_str());
  const auto addr = unix_address(path_);
  fd_ = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd_ < 0 || ::bind(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd_, 16) != 0) {
    const std::string why = std::strerror(errno);
    close_fd(fd_);
    throw Error(ErrorCode::BindFailure, "cannot bind control socket: " + why, path_.string());
  }
  thread_ = std::thread([this] { serve(); });
}

ControlServer::~ControlServer() { stop(); }

void ControlServer::stop() {
  if (!running_.exchange(false)) return;
  if (thread_.joinable()) thread_.join();
  close_fd(fd_);
  ::unlink(path_.c_str());
}

void ControlServer::serve() {
  while (running_) {
    pollfd p{fd_, POLLIN, 0};
    if (::poll(&p, 1, kPollMs) <= 0) continue;
    int cfd = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (cfd < 0) continue;
    set_timeouts(cfd, 5000);
    std::string buffer;
    std::string line;
    if (read_line(cfd, buffer, line)) {
      json response;
      auto request = json::parse(line, nullptr, false);
      if (request.is_discarded()) {
        response = error_json(ErrorCode::InvalidArgument, "request is not valid JSON");
      } else if (request.is_object() && request.value("cmd", "") == "shutdown") {
        shutdown_requested_ = true;
        response = json{{"ok", true}};
      } else {
        response = handle_request(service_, request);
      }
      send_all(cfd, response.dump() + "\n");
    }
    ::close(cfd);
  }
}

json control_request(const std::filesystem::path& path, const json& request, int timeout_ms) {
  int fd = connect_unix(path);
  if (fd < 0) throw Error(ErrorCode::TransportError, "no daemon answers on the control socket", path.string());
  set_timeouts(fd, timeout_ms);
  std::string buffer;
  std::string line;
  const bool ok = send_all(fd, request.dump() + "\n") && read_line(fd, buffer, line);
  close_fd(fd);
  if (!ok) throw Error(ErrorCode::TransportError, "control socket closed without a response", path.string());
  auto response = json::parse(line, nullptr, false);
  if (response.is_discarded()) throw Error(ErrorCode::TransportError, "control response is not JSON", path.string());
  return response;
}

}  // namespace mmp
