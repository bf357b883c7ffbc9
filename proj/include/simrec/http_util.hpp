#pragma once

#include <string>

namespace simrec {

/// POSTs a JSON payload and returns the response body. Throws BackendError on
/// connection failure or non-2xx status. api_key, when non-empty, is sent as
/// a bearer token.
std::string http_post_json(const std::string& base, const std::string& path,
                           const std::string& api_key, const std::string& payload,
                           int connect_timeout_s, int read_timeout_s);

}  // namespace simrec
