#include "docmatch/http.hpp"

#include <charconv>

#include <httplib.h>

namespace docmatch {

int http_status(Errc code) noexcept {
  switch (code) {
    case Errc::kSessionNotFound: return 404;
    case Errc::kOutstandingQuestion:
    case Errc::kStaleOrdinal:
    case Errc::kSessionComplete:
    case Errc::kSessionNotReady: return 409;
    case Errc::kInvalidChoice:
    case Errc::kValidation: return 400;
    case Errc::kUnauthorized: return 401;
    case Errc::kPoolUnavailable:
    case Errc::kInsufficientPool: return 503;
    default: return 500;
  }
}

BindAddress parse_bind(std::string_view text) {
  BindAddress out;
  std::string_view port = text;
  if (const auto colon = text.rfind(':'); colon != std::string_view::npos) {
    if (colon > 0) out.host = std::string(text.substr(0, colon));
    port = text.substr(colon + 1);
  }
  int value = -1;
  const auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), value);
  if (ec != std::errc() || ptr != port.data() + port.size() || value < 0 || value > 65535)
    throw Error(Errc::kConfig, "invalid bind address '" + std::string(text) + "'");
  out.port = value;
  return out;
}

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::ordered_json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const Error& e) {
  nlohmann::ordered_json body;
  body["error"] = to_string(e.code());
  body["message"] = e.what();
  if (const auto* outstanding = dynamic_cast<const OutstandingQuestionError*>(&e))
    body["question"] = outstanding->payload();
  send_json(res, http_status(e.code()), body);
}

// Runs `fn`, mapping failures onto JSON error bodies.
template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    send_error(res, e);
  } catch (const nlohmann::json::exception& e) {
    send_error(res, Error(Errc::kValidation, e.what()));
  } catch (const std::exception& e) {
    send_json(res, 500, {{"error", "InternalError"}, {"message", e.what()}});
  }
}

nlohmann::json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::kValidation, std::string("request body is not JSON: ") + e.what());
  }
}

std::optional<std::size_t> parse_choice(const nlohmann::json& body) {
  const char* field = body.contains("choice") ? "choice" : "chosen_index";
  const auto it = body.find(field);
  if (it == body.end()) throw Error(Errc::kValidation, "choice is required (null marks a timeout)");
  if (it->is_null()) return std::nullopt;
  if (it->is_number_unsigned()) return it->get<std::size_t>();
  if (it->is_number_integer()) throw Error(Errc::kInvalidChoice, "choice " + it->dump() + " is not in 0..2");
  throw Error(Errc::kValidation, "choice must be an integer or null");
}

}  // namespace

HttpFrontend::HttpFrontend(StudyService& service, std::optional<std::filesystem::path> static_dir)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  auto& srv = *server_;
  srv.Post("/sessions", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 201, service_.create_session()); });
  });
  srv.Get(R"(/sessions/([0-9A-Za-z]+)/next)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, service_.next_question(req.matches[1])); });
  });
  srv.Post(R"(/sessions/([0-9A-Za-z]+)/answers)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = parse_body(req);
      if (!body.contains("ordinal") || !body["ordinal"].is_number_unsigned())
        throw Error(Errc::kValidation, "ordinal must be a non-negative integer");
      // Client-side timing fields, if any, are ignored.
      send_json(res, 200,
                service_.submit_answer(req.matches[1], body["ordinal"].get<std::size_t>(), parse_choice(body)));
    });
  });
  srv.Post(R"(/sessions/([0-9A-Za-z]+)/survey)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, service_.submit_survey(req.matches[1], survey_from_json(parse_body(req)))); });
  });
  srv.Get(R"(/sessions/([0-9A-Za-z]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, service_.session_status(req.matches[1])); });
  });
  srv.Get("/admin/export", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      std::string token = req.get_param_value("token");
      const std::string auth = req.get_header_value("Authorization");
      constexpr std::string_view kBearer = "Bearer ";
      if (auth.rfind(kBearer, 0) == 0) token = auth.substr(kBearer.size());
      res.status = 200;
      res.set_content(service_.export_responses(token), "application/x-ndjson");
    });
  });
  if (static_dir) srv.set_mount_point("/", static_dir->string());
}

HttpFrontend::~HttpFrontend() = default;

int HttpFrontend::bind(const BindAddress& address) {
  const int port = address.port == 0 ? server_->bind_to_any_port(address.host)
                                     : (server_->bind_to_port(address.host, address.port) ? address.port : -1);
  if (port < 0)
    throw Error(Errc::kIoError, "cannot bind " + address.host + ":" + std::to_string(address.port));
  return port;
}

void HttpFrontend::serve() { server_->listen_after_bind(); }

void HttpFrontend::stop() { server_->stop(); }

}  // namespace docmatch
