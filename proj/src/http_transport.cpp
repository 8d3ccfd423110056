/*
 * Copyright 2026 The GeoFlow Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "geoflow/backends.hpp"

#include "httplib.h"

namespace geoflow {

namespace {

class HttplibTransport final : public HttpTransport {
 public:
  HttpResponse post(const std::string& url, const HttpHeaders& headers, const std::string& body,
                    double timeout_seconds) override {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw TransportError("malformed URL '" + url + "'");
    const auto path_begin = url.find('/', scheme_end + 3);
    const std::string origin = path_begin == std::string::npos ? url : url.substr(0, path_begin);
    const std::string path = path_begin == std::string::npos ? "/" : url.substr(path_begin);

    httplib::Client client(origin);
    const auto secs = static_cast<time_t>(timeout_seconds);
    const auto usecs = static_cast<time_t>((timeout_seconds - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);

    httplib::Headers h;
    std::string content_type = "application/json";
    for (const auto& [k, v] : headers) {
      if (k == "Content-Type") {
        content_type = v;
      } else {
        h.emplace(k, v);
      }
    }
    auto res = client.Post(path, h, body, content_type);
    if (!res) {
      throw TransportError("no response from " + origin + ": " + httplib::to_string(res.error()));
    }
    return HttpResponse{res->status, res->body};
  }
};

}  // namespace

std::unique_ptr<HttpTransport> make_http_transport() {
  return std::make_unique<HttplibTransport>();
}

}  // namespace geoflow
