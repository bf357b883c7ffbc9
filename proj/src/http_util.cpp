#include "simrec/http_util.hpp"

#include <httplib.h>

#include "simrec/common.hpp"

namespace simrec {

std::string http_post_json(const std::string& base, const std::string& path,
                           const std::string& api_key, const std::string& payload,
                           int connect_timeout_s, int read_timeout_s) {
    httplib::Client client(base);
    client.set_connection_timeout(connect_timeout_s, 0);
    client.set_read_timeout(read_timeout_s, 0);
    httplib::Headers headers;
    if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
    auto res = client.Post(path, headers, payload, "application/json");
    if (!res)
        throw BackendError("HTTP request to " + base + path +
                           " failed: " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300)
        throw BackendError("HTTP request to " + base + path + " returned status " +
                           std::to_string(res->status));
    return res->body;
}

}  // namespace simrec
