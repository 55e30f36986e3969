#pragma once

// Masked-inference wire protocol: frames are a little-endian u32 byte length
// followed by a UTF-8 JSON body. Every body carries a "type" field:
//   hello      {version, model_id}
//   hello_ack  {version, model_id, sites, grid, channels}
//   forward    {request_id, video_id, masks: [{site, rle}], target}
//   result     {request_id, metric}
//   error      {request_id, code, message}

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "vtcd/backend.hpp"

namespace vtcd::wire {

inline constexpr int kProtocolVersion = 1;
inline constexpr std::uint32_t kMaxFrameBytes = 64u << 20;

std::vector<std::uint8_t> encode_frame(const Json& body);
// Decodes one complete frame; throws kProtocol on a malformed frame.
Json decode_frame(const std::vector<std::uint8_t>& frame);

// Blocking frame IO on a connected socket or pipe. read_frame returns
// nullopt on clean end-of-stream before a frame starts; everything else that
// goes wrong is a kTransport BackendError.
void write_frame(int fd, const Json& body);
std::optional<Json> read_frame(int fd);

Json make_hello(const std::string& model_id);
Json make_hello_ack(const ModelBackend& backend, std::int64_t channels);
Json make_forward(std::uint64_t request_id, const MaskRequest& request);
Json make_result(std::uint64_t request_id, double metric);
Json make_error(std::optional<std::uint64_t> request_id, const std::string& code, const std::string& message);

MaskRequest parse_forward(const Json& message);

// Server side: answers one message. Never throws; failures become error
// frames so the stream stays alive.
Json handle_message(const ModelBackend& backend, const Json& message, std::int64_t channels = 0);

// Serves one connection until the peer closes it.
void serve_connection(int fd, const ModelBackend& backend, std::int64_t channels = 0);

struct HelloAck {
  int version = 0;
  std::string model_id;
  std::vector<SiteId> sites;
  Dims3 grid;
  std::int64_t channels = 0;
};

// host:port endpoint.
struct Endpoint {
  std::string host;
  int port = 0;
  static Endpoint parse(const std::string& text);
  std::string str() const { return host + ":" + std::to_string(port); }
};

}  // namespace vtcd::wire

namespace vtcd {

// Client for a remote model server. Holds a pool of connections; each
// connection carries one request at a time, so up to `pool_size` forwards
// run concurrently. Broken connections are re-established on next use.
class RemoteBackend : public ModelBackend {
 public:
  RemoteBackend(const std::string& endpoint, int pool_size = 1,
                std::chrono::milliseconds timeout = std::chrono::milliseconds(30000),
                std::string model_id = {});
  ~RemoteBackend() override;

  RemoteBackend(const RemoteBackend&) = delete;
  RemoteBackend& operator=(const RemoteBackend&) = delete;

  std::string model_id() const override { return ack_.model_id; }
  std::vector<SiteId> list_sites() const override { return ack_.sites; }
  Dims3 grid() const override { return ack_.grid; }
  double evaluate(const MaskRequest& request) const override;

  const wire::HelloAck& handshake() const { return ack_; }

 private:
  struct Connection {
    int fd = -1;
  };

  int open_connection(wire::HelloAck* ack) const;
  std::size_t acquire() const;
  void release(std::size_t slot) const;

  wire::Endpoint endpoint_;
  std::chrono::milliseconds timeout_;
  std::string requested_model_;
  wire::HelloAck ack_;
  mutable std::vector<Connection> pool_;
  mutable std::vector<bool> busy_;
  mutable std::mutex mutex_;
  mutable std::condition_variable available_;
  mutable std::atomic<std::uint64_t> next_request_{1};
};

}  // namespace vtcd
