#pragma once
// Error hierarchy shared by every module. The four leaf categories map
// onto the CLI exit-code contract: usage errors exit 1, data/KB errors
// exit 2, gateway/transport errors exit 3.

#include <stdexcept>
#include <string>

namespace finrag {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid configuration: bad knob values, dimension mismatches.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Invalid caller-supplied input: empty text, malformed manifests passed
// by the user, oversized requests.
class InputError : public Error {
public:
    using Error::Error;
};

// Corrupt or inconsistent persisted state: index files, KB layout.
class DataError : public Error {
public:
    using Error::Error;
};

// Network/model-server failures after retries are exhausted.
class TransportError : public Error {
public:
    using Error::Error;
};

} // namespace finrag
