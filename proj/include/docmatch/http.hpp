#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "docmatch/error.hpp"
#include "docmatch/service.hpp"

namespace httplib {
class Server;
}

namespace docmatch {

int http_status(Errc code) noexcept;

struct BindAddress {
  std::string host = "127.0.0.1";
  int port = 8080;
};

// "host:port", ":port" or "port".
BindAddress parse_bind(std::string_view text);

// JSON frontend over StudyService:
//   POST /sessions, GET /sessions/{id}/next, POST /sessions/{id}/answers,
//   POST /sessions/{id}/survey, GET /sessions/{id}, GET /admin/export.
class HttpFrontend {
 public:
  explicit HttpFrontend(StudyService& service, std::optional<std::filesystem::path> static_dir = std::nullopt);
  ~HttpFrontend();

  // Port 0 picks a free port. Returns the bound port.
  int bind(const BindAddress& address);
  // Blocks until stop().
  void serve();
  void stop();

 private:
  StudyService& service_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace docmatch
