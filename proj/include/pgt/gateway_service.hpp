#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>

#include "pgt/annotation_catalog.hpp"
#include "pgt/inference_gateway.hpp"

namespace pgt {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  /// 0 picks a free port.
  int port = 8080;
  std::shared_ptr<const Catalog> catalog;
  /// PNG store written by ingest.
  std::filesystem::path image_root;
  std::shared_ptr<const Backend> backend;
  std::size_t default_page_size = 50;
  std::size_t max_page_size = 500;
};

/// HTTP front of a Gateway.
///
///   POST /v1/chat               ChatRequest -> ChatResponse
///   GET  /v1/slices             ?dataset=&has_tumor=&min_bbox_ratio=&page=&page_size=
///   GET  /v1/slices/{id}/image  PNG bytes
///   GET  /v1/slices/{id}/record SliceRecord
///   GET  /v1/sessions/{id}      stored chat turns
///   GET  /v1/health
///
/// Errors answer {"error": <code name>, "message": ...}.
class GatewayService {
 public:
  /// Throws BadConfig.
  explicit GatewayService(ServiceConfig config);
  ~GatewayService();
  GatewayService(const GatewayService&) = delete;
  GatewayService& operator=(const GatewayService&) = delete;

  /// Binds and starts serving on a background thread. Throws PortInUse.
  void start();
  /// Stops accepting, lets in-flight requests finish, joins the thread.
  void stop();
  /// Blocks until the server stops running.
  void wait();
  int port() const;
  std::string base_url() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace pgt
