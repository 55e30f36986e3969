#include "vtcd/wire.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace vtcd::wire {

std::vector<std::uint8_t> encode_frame(const Json& body) {
  const std::string text = body.dump();
  if (text.size() > kMaxFrameBytes) throw Error(ErrorCode::kProtocol, "frame exceeds maximum size");
  std::vector<std::uint8_t> out(4 + text.size());
  const auto n = static_cast<std::uint32_t>(text.size());
  for (int i = 0; i < 4; ++i) out[i] = static_cast<std::uint8_t>((n >> (8 * i)) & 0xFF);
  std::memcpy(out.data() + 4, text.data(), text.size());
  return out;
}

Json decode_frame(const std::vector<std::uint8_t>& frame) {
  if (frame.size() < 4) throw Error(ErrorCode::kProtocol, "frame shorter than its length prefix");
  std::uint32_t n = 0;
  for (int i = 0; i < 4; ++i) n |= static_cast<std::uint32_t>(frame[i]) << (8 * i);
  if (frame.size() != 4 + static_cast<std::size_t>(n)) throw Error(ErrorCode::kProtocol, "frame length mismatch");
  try {
    return Json::parse(frame.begin() + 4, frame.end());
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kProtocol, std::string("malformed frame body: ") + e.what());
  }
}

namespace {

void write_all(int fd, const std::uint8_t* data, std::size_t size) {
  while (size > 0) {
    const ssize_t n = ::send(fd, data, size, MSG_NOSIGNAL);
    if (n < 0 && errno == ENOTSOCK) {
      const ssize_t m = ::write(fd, data, size);
      if (m < 0) throw BackendError(ErrorCode::kTransport, std::string("write failed: ") + std::strerror(errno));
      data += m;
      size -= static_cast<std::size_t>(m);
      continue;
    }
    if (n < 0) {
      if (errno == EINTR) continue;
      throw BackendError(ErrorCode::kTransport, std::string("send failed: ") + std::strerror(errno));
    }
    data += n;
    size -= static_cast<std::size_t>(n);
  }
}

// Returns bytes read; 0 only on EOF before any byte.
std::size_t read_all(int fd, std::uint8_t* data, std::size_t size) {
  std::size_t got = 0;
  while (got < size) {
    const ssize_t n = ::read(fd, data + got, size - got);
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK) throw BackendError(ErrorCode::kTransport, "read timed out");
      throw BackendError(ErrorCode::kTransport, std::string("read failed: ") + std::strerror(errno));
    }
    if (n == 0) {
      if (got == 0) return 0;
      throw BackendError(ErrorCode::kTransport, "connection closed mid-frame");
    }
    got += static_cast<std::size_t>(n);
  }
  return got;
}

}  // namespace

void write_frame(int fd, const Json& body) {
  const auto frame = encode_frame(body);
  write_all(fd, frame.data(), frame.size());
}

std::optional<Json> read_frame(int fd) {
  std::uint8_t header[4];
  if (read_all(fd, header, 4) == 0) return std::nullopt;
  std::uint32_t n = 0;
  for (int i = 0; i < 4; ++i) n |= static_cast<std::uint32_t>(header[i]) << (8 * i);
  if (n > kMaxFrameBytes) throw BackendError(ErrorCode::kTransport, "peer announced an oversized frame");
  std::vector<std::uint8_t> body(n);
  if (n > 0 && read_all(fd, body.data(), n) == 0) throw BackendError(ErrorCode::kTransport, "connection closed mid-frame");
  try {
    return Json::parse(body.begin(), body.end());
  } catch (const Json::exception& e) {
    throw BackendError(ErrorCode::kProtocol, std::string("malformed frame body: ") + e.what());
  }
}

Json make_hello(const std::string& model_id) {
  return Json{{"type", "hello"}, {"version", kProtocolVersion}, {"model_id", model_id}};
}

Json make_hello_ack(const ModelBackend& backend, std::int64_t channels) {
  Json sites = Json::array();
  for (const auto& s : backend.list_sites()) sites.push_back(site_to_json(s));
  return Json{{"type", "hello_ack"},
              {"version", kProtocolVersion},
              {"model_id", backend.model_id()},
              {"sites", sites},
              {"grid", dims_to_json(backend.grid())},
              {"channels", channels}};
}

Json make_forward(std::uint64_t request_id, const MaskRequest& request) {
  Json masks = Json::array();
  for (const auto& m : request.masks) masks.push_back({{"site", site_to_json(m.site)}, {"rle", mask_to_json(m.mask)}});
  return Json{{"type", "forward"},
              {"request_id", request_id},
              {"video_id", request.video_id},
              {"masks", masks},
              {"target", target_to_json(request.target)}};
}

Json make_result(std::uint64_t request_id, double metric) {
  return Json{{"type", "result"}, {"request_id", request_id}, {"metric", metric}};
}

Json make_error(std::optional<std::uint64_t> request_id, const std::string& code, const std::string& message) {
  Json j{{"type", "error"}, {"code", code}, {"message", message}};
  j["request_id"] = request_id ? Json(*request_id) : Json(nullptr);
  return j;
}

MaskRequest parse_forward(const Json& message) {
  MaskRequest req;
  req.video_id = message.at("video_id").get<std::string>();
  for (const auto& m : message.at("masks")) req.masks.push_back({site_from_json(m.at("site")), mask_from_json(m.at("rle"))});
  req.target = target_from_json(message.at("target"));
  return req;
}

Json handle_message(const ModelBackend& backend, const Json& message, std::int64_t channels) {
  std::optional<std::uint64_t> id;
  try {
    if (!message.is_object() || !message.contains("type"))
      return make_error(std::nullopt, "malformed", "message lacks a type");
    if (message.contains("request_id") && message.at("request_id").is_number_unsigned())
      id = message.at("request_id").get<std::uint64_t>();
    const auto type = message.at("type").get<std::string>();
    if (type == "hello") {
      const int version = message.value("version", 0);
      if (version != kProtocolVersion)
        return make_error(std::nullopt, "version_mismatch",
                          "server speaks version " + std::to_string(kProtocolVersion) + ", client asked for " +
                              std::to_string(version));
      return make_hello_ack(backend, channels);
    }
    if (type == "forward") {
      if (!id) return make_error(std::nullopt, "malformed", "forward lacks a request_id");
      return make_result(*id, backend.evaluate(parse_forward(message)));
    }
    return make_error(id, "unknown_type", "unsupported message type '" + type + "'");
  } catch (const Error& e) {
    return make_error(id, error_code_name(e.code()), e.what());
  } catch (const std::exception& e) {
    return make_error(id, "malformed", e.what());
  }
}

void serve_connection(int fd, const ModelBackend& backend, std::int64_t channels) {
  for (;;) {
    std::optional<Json> msg;
    try {
      msg = read_frame(fd);
    } catch (const BackendError& e) {
      if (e.code() == ErrorCode::kProtocol) {
        write_frame(fd, make_error(std::nullopt, "malformed", e.what()));
        continue;
      }
      return;
    }
    if (!msg) return;
    try {
      write_frame(fd, handle_message(backend, *msg, channels));
    } catch (const BackendError&) {
      return;
    }
  }
}

Endpoint Endpoint::parse(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size())
    throw Error(ErrorCode::kInvalidArgument, "endpoint must be host:port, got '" + text + "'");
  Endpoint ep;
  ep.host = text.substr(0, colon);
  try {
    ep.port = std::stoi(text.substr(colon + 1));
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidArgument, "bad port in endpoint '" + text + "'");
  }
  if (ep.port <= 0 || ep.port > 65535) throw Error(ErrorCode::kInvalidArgument, "port out of range");
  return ep;
}

}  // namespace vtcd::wire

namespace vtcd {

namespace {

int connect_with_timeout(const wire::Endpoint& ep, std::chrono::milliseconds timeout) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(ep.port);
  if (int rc = ::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res); rc != 0)
    throw BackendError(ErrorCode::kTransport, "cannot resolve " + ep.str() + ": " + ::gai_strerror(rc));
  std::string last_error = "no addresses";
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    const int flags = ::fcntl(fd, F_GETFL, 0);
    ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
    if (rc < 0 && errno == EINPROGRESS) {
      pollfd pfd{fd, POLLOUT, 0};
      rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
      if (rc == 1) {
        int err = 0;
        socklen_t len = sizeof(err);
        ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
        rc = err == 0 ? 0 : -1;
        errno = err;
      } else {
        rc = -1;
        errno = ETIMEDOUT;
      }
    }
    if (rc == 0) {
      ::fcntl(fd, F_SETFL, flags);
      timeval tv{static_cast<time_t>(timeout.count() / 1000), static_cast<suseconds_t>((timeout.count() % 1000) * 1000)};
      ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
      ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      ::freeaddrinfo(res);
      return fd;
    }
    last_error = std::strerror(errno);
    ::close(fd);
  }
  ::freeaddrinfo(res);
  throw BackendError(ErrorCode::kTransport, "cannot connect to " + ep.str() + ": " + last_error);
}

}  // namespace

RemoteBackend::RemoteBackend(const std::string& endpoint, int pool_size, std::chrono::milliseconds timeout,
                             std::string model_id)
    : endpoint_(wire::Endpoint::parse(endpoint)), timeout_(timeout), requested_model_(std::move(model_id)) {
  if (pool_size < 1) throw Error(ErrorCode::kInvalidArgument, "connection pool size must be >= 1");
  pool_.resize(static_cast<std::size_t>(pool_size));
  busy_.assign(pool_.size(), false);
  pool_[0].fd = open_connection(&ack_);
}

RemoteBackend::~RemoteBackend() {
  for (auto& c : pool_)
    if (c.fd >= 0) ::close(c.fd);
}

int RemoteBackend::open_connection(wire::HelloAck* ack) const {
  const int fd = connect_with_timeout(endpoint_, timeout_);
  try {
    wire::write_frame(fd, wire::make_hello(requested_model_));
    const auto reply = wire::read_frame(fd);
    if (!reply) throw BackendError(ErrorCode::kTransport, "server closed the connection during handshake");
    const auto type = reply->value("type", std::string{});
    if (type == "error")
      throw BackendError(reply->value("code", std::string{}) == "version_mismatch" ? ErrorCode::kProtocol
                                                                                  : ErrorCode::kBackend,
                         "handshake rejected: " + reply->value("message", std::string{}),
                         reply->value("code", std::string{}));
    if (type != "hello_ack") throw BackendError(ErrorCode::kProtocol, "expected hello_ack, got '" + type + "'");
    const int version = reply->value("version", 0);
    if (version != wire::kProtocolVersion)
      throw BackendError(ErrorCode::kProtocol, "server negotiated unsupported version " + std::to_string(version));
    if (ack) {
      ack->version = version;
      ack->model_id = reply->value("model_id", std::string{});
      ack->sites.clear();
      for (const auto& s : reply->at("sites")) ack->sites.push_back(site_from_json(s));
      ack->grid = dims_from_json(reply->at("grid"));
      ack->channels = reply->value("channels", std::int64_t{0});
    }
  } catch (const Json::exception& e) {
    ::close(fd);
    throw BackendError(ErrorCode::kProtocol, std::string("malformed hello_ack: ") + e.what());
  } catch (...) {
    ::close(fd);
    throw;
  }
  return fd;
}

std::size_t RemoteBackend::acquire() const {
  std::unique_lock lock(mutex_);
  for (;;) {
    for (std::size_t i = 0; i < busy_.size(); ++i)
      if (!busy_[i]) {
        busy_[i] = true;
        return i;
      }
    available_.wait(lock);
  }
}

void RemoteBackend::release(std::size_t slot) const {
  {
    std::lock_guard lock(mutex_);
    busy_[slot] = false;
  }
  available_.notify_one();
}

double RemoteBackend::evaluate(const MaskRequest& request) const {
  validate_request(*this, request);
  const std::size_t slot = acquire();
  struct Releaser {
    const RemoteBackend* self;
    std::size_t slot;
    ~Releaser() { self->release(slot); }
  } releaser{this, slot};

  Connection& conn = pool_[slot];
  auto drop_connection = [&] {
    if (conn.fd >= 0) ::close(conn.fd);
    conn.fd = -1;
  };
  try {
    if (conn.fd < 0) conn.fd = open_connection(nullptr);
    const std::uint64_t id = next_request_.fetch_add(1);
    wire::write_frame(conn.fd, wire::make_forward(id, request));
    for (;;) {
      const auto reply = wire::read_frame(conn.fd);
      if (!reply) throw BackendError(ErrorCode::kTransport, "server closed the connection mid-request");
      const auto& r = *reply;
      if (!r.contains("request_id") || r.at("request_id").is_null()) {
        if (r.value("type", std::string{}) == "error")
          throw BackendError(ErrorCode::kBackend, "server error: " + r.value("message", std::string{}),
                             r.value("code", std::string{}));
        continue;
      }
      if (r.at("request_id").get<std::uint64_t>() != id) continue;
      const auto type = r.value("type", std::string{});
      if (type == "result") return r.at("metric").get<double>();
      if (type == "error")
        throw BackendError(ErrorCode::kBackend, "server error: " + r.value("message", std::string{}),
                           r.value("code", std::string{}));
      throw BackendError(ErrorCode::kProtocol, "unexpected reply type '" + type + "'");
    }
  } catch (const BackendError& e) {
    if (e.code() == ErrorCode::kTransport || e.code() == ErrorCode::kProtocol) drop_connection();
    throw;
  } catch (const Json::exception& e) {
    drop_connection();
    throw BackendError(ErrorCode::kProtocol, std::string("malformed reply: ") + e.what());
  }
}

}  // namespace vtcd
