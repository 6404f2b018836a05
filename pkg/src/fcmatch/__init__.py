"""fcmatch: perceptual fingerprint matching for fact-checked images.

Core layers:

* `raster`   -- image containers and PGM/PPM/raw-luma codecs
* `pdq`      -- 256-bit DCT perceptual hashing
* `index`    -- Bloom membership and exact Hamming-radius search
* `store`    -- fingerprint records, signed update bundles, device sets
* `pipeline` -- deterministic E2EE sharing simulator
* `analysis` -- before/after-debunk share analytics

`fcmatch.service` wraps the core in a FastAPI app; the `fcmatch` CLI is a
thin client over the same typed operations.
"""

__version__ = "0.1.0"
