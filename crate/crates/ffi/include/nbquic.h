#ifndef NBQUIC_H
#define NBQUIC_H

/* Generated from crates/ffi/src/lib.rs. Regenerate with: cbindgen --config cbindgen.toml --output include/nbquic.h */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/* Shaper verdicts. */
#define NBQ_DELIVER 0
#define NBQ_DROP_LOSS 1
#define NBQ_DROP_MTU 2

typedef enum NbqStatus {
  NBQ_STATUS_OK = 0,
  NBQ_STATUS_NULL_POINTER = 1,
  NBQ_STATUS_INVALID_ARGUMENT = 2,
  NBQ_STATUS_INVALID_TOPIC = 3,
  NBQ_STATUS_NOT_FOUND = 4,
  NBQ_STATUS_PAYLOAD_TOO_LARGE = 5,
  NBQ_STATUS_EMPTY = 6,
  NBQ_STATUS_CLOSED = 7,
  NBQ_STATUS_BUFFER_TOO_SMALL = 8,
  NBQ_STATUS_INSUFFICIENT_DATA = 9,
  NBQ_STATUS_PANIC = 255,
} NbqStatus;

typedef struct NbqRegistry NbqRegistry;

typedef struct NbqShaper NbqShaper;

typedef struct NbqStreamBudget NbqStreamBudget;

typedef struct NbqSubscription NbqSubscription;

typedef struct NbqTuning {
  uint64_t expected_rtt_ms;
  uint64_t initial_rtt_guess_ms;
  uint64_t max_ack_delay_ms;
  uint64_t handshake_timeout_ms;
  uint64_t handshake_idle_timeout_ms;
  uint64_t min_remote_idle_timeout_ms;
  uint64_t max_incoming_streams;
  double watermark_fraction;
  bool pmtud_enabled;
} NbqTuning;

typedef struct NbqSummary {
  size_t n;
  double mean;
  double median;
  double q1;
  double q3;
  double whisker_low;
  double whisker_high;
  size_t outliers;
} NbqSummary;

/* Loss direction: 0 up, 1 down, 2 both. Rates of 0 mean unlimited. */
typedef struct NbqImpairment {
  double delay_ms;
  double jitter_ms;
  double loss_pct;
  uint32_t loss_direction;
  double rate_kbit_up;
  double rate_kbit_down;
  size_t mtu;
  uint64_t seed;
} NbqImpairment;

#ifdef __cplusplus
extern "C" {
#endif

/* Static, NUL-terminated description of a status code. */
const char *nbq_status_str(NbqStatus status);

const char *nbq_version(void);

/* Zero for any size argument selects the default. */
NbqStatus nbq_registry_new(size_t retain_depth,
                           size_t max_payload,
                           size_t subscriber_queue,
                           NbqRegistry **out);

void nbq_registry_free(NbqRegistry *reg);

/* `created` receives 1 for a new topic, 0 if it already existed. */
NbqStatus nbq_registry_create_topic(const NbqRegistry *reg, const char *name, bool *created);

NbqStatus nbq_registry_delete_topic(const NbqRegistry *reg, const char *name);

NbqStatus nbq_registry_publish(const NbqRegistry *reg,
                               const char *name,
                               const uint8_t *data,
                               size_t len,
                               uint64_t *seq);

NbqStatus nbq_registry_subscriber_count(const NbqRegistry *reg, const char *name, size_t *count);

/* The subscription keeps the registry alive until it is freed. */
NbqStatus nbq_subscribe(const NbqRegistry *reg, const char *name, NbqSubscription **out);

/* Copies the next event into `buf`. `len` always receives the payload size;
 * on BUFFER_TOO_SMALL the event stays queued for a retry with a larger
 * buffer. EMPTY means nothing is queued yet, CLOSED that the topic is
 * gone or the subscriber fell behind. */
NbqStatus nbq_subscription_next(NbqSubscription *sub,
                                uint8_t *buf,
                                size_t cap,
                                size_t *len,
                                uint64_t *seq);

void nbq_subscription_free(NbqSubscription *sub);

NbqStatus nbq_stream_budget_new(uint64_t negotiated_max, double fraction, NbqStreamBudget **out);

void nbq_stream_budget_free(NbqStreamBudget *b);

NbqStatus nbq_stream_budget_opened(NbqStreamBudget *b);

/* `new_limit` is set to the MAX_STREAMS value to send, or 0 when no
 * advertisement is due. */
NbqStatus nbq_stream_budget_closed(NbqStreamBudget *b, uint64_t *new_limit);

uint64_t nbq_stream_budget_available(const NbqStreamBudget *b);

uint64_t nbq_stream_budget_advertisements(const NbqStreamBudget *b);

NbqStatus nbq_watermark_threshold(uint64_t negotiated_max, double fraction, uint64_t *out);

NbqStatus nbq_frames_saved(uint64_t closed_total,
                           uint64_t negotiated_max,
                           double fraction,
                           uint64_t *out);

NbqStatus nbq_derive_tuning(double downlink_kbit,
                            double uplink_kbit,
                            uint64_t rtt_ms,
                            size_t mtu,
                            NbqTuning *out);

/* Box-plot summary. Needs at least four finite samples. */
NbqStatus nbq_summarize(const double *data, size_t n, NbqSummary *out);

/* Writes `Basic <base64>` plus a NUL terminator. `len` receives the length
 * without the terminator, also when the buffer is too small. */
NbqStatus nbq_encode_basic_header(const char *user,
                                  const char *pass,
                                  char *buf,
                                  size_t cap,
                                  size_t *len);

/* One direction of the link emulator as a pure function of time, for
 * offline simulation. `direction`: 0 up, 1 down. */
NbqStatus nbq_shaper_new(const NbqImpairment *spec, uint32_t direction, NbqShaper **out);

void nbq_shaper_free(NbqShaper *s);

/* `verdict` receives one of NBQ_DELIVER, NBQ_DROP_LOSS, NBQ_DROP_MTU;
 * `deliver_at_ms` is only written on delivery. */
NbqStatus nbq_shaper_forward(NbqShaper *s,
                             size_t size,
                             double now_ms,
                             uint32_t *verdict,
                             double *deliver_at_ms);

#ifdef __cplusplus
}  /* extern "C" */
#endif

#endif  /* NBQUIC_H */
