#include "diffrec.h"

#include <cstdlib>
#include <cstring>
#include <sstream>
#include <string>

#include "diffrec/config.hpp"
#include "diffrec/pipeline.hpp"
#include "diffrec/version.hpp"

struct diffrec_run {
    nlohmann::json config = diffrec::run_config_to_json(diffrec::RunConfig{});
    std::string output;
    std::string error;
};

namespace {

template <class Fn>
diffrec_status guarded(diffrec_run* run, Fn&& fn) {
    if (!run) return DIFFREC_ERR_INVALID;
    run->error.clear();
    try {
        fn();
        return DIFFREC_OK;
    } catch (const std::invalid_argument& e) {
        run->error = e.what();
        return DIFFREC_ERR_INVALID;
    } catch (const std::exception& e) {
        run->error = e.what();
        return DIFFREC_ERR_RUNTIME;
    } catch (...) {
        run->error = "unknown error";
        return DIFFREC_ERR_RUNTIME;
    }
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out) std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

}  // namespace

extern "C" {

const char* diffrec_version(void) { return diffrec::kVersion; }

char* diffrec_default_config(void) {
    return dup_string(diffrec::run_config_to_json(diffrec::RunConfig{}).dump(2));
}

void diffrec_string_free(char* s) { std::free(s); }

diffrec_run* diffrec_run_create(void) { return new (std::nothrow) diffrec_run(); }

void diffrec_run_destroy(diffrec_run* run) { delete run; }

diffrec_status diffrec_run_load_config(diffrec_run* run, const char* path) {
    return guarded(run, [&] {
        if (!path) throw diffrec::ValidationError("config path is null");
        diffrec::RunConfig cfg = diffrec::load_run_config(path);
        run->config = diffrec::run_config_to_json(cfg);
    });
}

diffrec_status diffrec_run_set(diffrec_run* run, const char* assignment) {
    return guarded(run, [&] {
        if (!assignment) throw diffrec::ValidationError("override is null");
        nlohmann::json next = run->config;
        diffrec::apply_override(next, assignment);
        diffrec::run_config_from_json(next);  // reject unknown keys and bad values now
        run->config = next;
    });
}

diffrec_status diffrec_run_set_string(diffrec_run* run, const char* key, const char* value) {
    return guarded(run, [&] {
        if (!key || !value) throw diffrec::ValidationError("key or value is null");
        std::string pointer;
        std::stringstream ss(key);
        std::string part;
        while (std::getline(ss, part, '.')) {
            if (part.empty()) throw diffrec::ValidationError("override has an empty key segment: " + std::string(key));
            pointer += "/" + part;
        }
        nlohmann::json next = run->config;
        next[nlohmann::json::json_pointer(pointer)] = std::string(value);
        diffrec::run_config_from_json(next);
        run->config = next;
    });
}

diffrec_status diffrec_run_execute(diffrec_run* run, const char* subcommand) {
    return guarded(run, [&] {
        if (!subcommand) throw diffrec::ValidationError("subcommand is null");
        diffrec::RunConfig cfg = diffrec::run_config_from_json(run->config);
        std::ostringstream out;
        diffrec::run_subcommand(subcommand, cfg, out);
        run->output = out.str();
    });
}

const char* diffrec_run_output(const diffrec_run* run) { return run ? run->output.c_str() : ""; }

const char* diffrec_run_error(const diffrec_run* run) { return run ? run->error.c_str() : ""; }

}  // extern "C"
