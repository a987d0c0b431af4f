#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#include "mmp/config.hpp"
#include "mmp/node.hpp"
#include "mmp/service.hpp"

namespace mmp {

Timestamp wall_clock_ms();

// A running mesh node. One owner thread holds the store; socket readers hand
// frames to it through an ordered queue, so store mutations are totally
// ordered. Outbound links are dialed from the static peer list with
// exponential backoff and carry newline-delimited frames.
class Peer : public MeshService {
 public:
  // Throws CorruptStore, BindFailure or InvalidConfig.
  static std::unique_ptr<Peer> start(PeerConfig config);
  ~Peer() override;

  Peer(const Peer&) = delete;
  Peer& operator=(const Peer&) = delete;

  void shutdown();

  ObserveResult observe(const FieldTexts& texts, Mood mood, Body body,
                        const std::optional<NodeId>& to = std::nullopt) override;
  std::vector<StoredEntry> recall(const FieldTexts& query, std::size_t limit) override;
  StoredEntry fetch(const CmbKey& key) override;
  std::vector<PeerStatus> peers() override;
  nlohmann::json status() override;

  // Encodes once and writes to every connected peer (or only `to`). Never
  // delivers to this node itself.
  DeliveryReport broadcast(const Cmb& cmb, const std::optional<NodeId>& to = std::nullopt);

  // Queues a raw line as if it had arrived from `from`.
  void inject_frame(std::string line, NodeId from);

  std::size_t store_size();
  DropCounts total_drops();
  const PeerConfig& config() const { return config_; }
  // Actual listening port (useful when configured with port 0).
  std::uint16_t bound_port() const { return bound_port_; }

 private:
  explicit Peer(PeerConfig config, MeshMem mem);

  struct Link {
    PeerRef ref;
    int fd = -1;
    std::int64_t backoff_ms = 0;
    Timestamp next_attempt = 0;
    std::uint64_t frames_out = 0;
    std::uint64_t send_failures = 0;
  };

  template <typename F>
  auto on_owner(F&& fn) -> decltype(fn());

  void post(std::function<void()> task);
  void owner_loop();
  void accept_loop();
  void dial_loop();
  void read_loop(int fd);
  void handle_frame(const std::string& line, const NodeId& from);
  DeliveryReport broadcast_line(const std::string& line, const std::optional<NodeId>& to);
  void drop_link(Link& link);

  PeerConfig config_;
  Node node_;
  int listen_fd_ = -1;
  std::uint16_t bound_port_ = 0;
  std::atomic<bool> running_{true};

  std::mutex queue_mu_;
  std::condition_variable queue_cv_;
  std::deque<std::function<void()>> queue_;
  std::thread::id owner_id_;

  std::mutex net_mu_;
  std::vector<Link> links_;
  std::vector<int> inbound_fds_;

  std::mutex threads_mu_;
  std::vector<std::thread> readers_;
  std::thread owner_;
  std::thread acceptor_;
  std::thread dialer_;
};

// Dials each configured peer once and writes `line`. Used by one-shot CLI
// commands when no daemon is running.
DeliveryReport deliver_direct(const PeerConfig& config, const std::string& line,
                              const std::optional<NodeId>& to = std::nullopt, int timeout_ms = 1000);

// Drives a node without the daemon: loads the store, mutates it, delivers
// observations by direct dial.
class OfflineService : public MeshService {
 public:
  explicit OfflineService(PeerConfig config);

  ObserveResult observe(const FieldTexts& texts, Mood mood, Body body,
                        const std::optional<NodeId>& to = std::nullopt) override;
  std::vector<StoredEntry> recall(const FieldTexts& query, std::size_t limit) override;
  StoredEntry fetch(const CmbKey& key) override;
  std::vector<PeerStatus> peers() override;
  nlohmann::json status() override;

 private:
  PeerConfig config_;
  MeshMem mem_;
};

// Local control socket for a running Peer: one JSON request line in, one
// JSON response line out.
class ControlServer {
 public:
  // Throws BindFailure if another daemon already answers on `path`.
  ControlServer(MeshService& service, std::filesystem::path path);
  ~ControlServer();
  ControlServer(const ControlServer&) = delete;
  ControlServer& operator=(const ControlServer&) = delete;

  void stop();
  const std::filesystem::path& path() const { return path_; }
  // Set once a {"cmd": "shutdown"} request arrives.
  bool shutdown_requested() const { return shutdown_requested_.load(); }

 private:
  void serve();

  MeshService& service_;
  std::filesystem::path path_;
  int fd_ = -1;
  std::atomic<bool> running_{true};
  std::atomic<bool> shutdown_requested_{false};
  std::thread thread_;
};

bool control_socket_live(const std::filesystem::path& path);
// Throws TransportError if nothing answers.
nlohmann::json control_request(const std::filesystem::path& path, const nlohmann::json& request,
                               int timeout_ms = 5000);

}  // namespace mmp
