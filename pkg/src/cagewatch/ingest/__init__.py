from .adapters import (
    ListingSource,
    MockListingSource,
    MockObservationSource,
    MockSearchEngine,
    ObservationSource,
    SearchEngine,
)
from .fetch import (
    RetriableFetchError,
    download_listing_images,
    fetch_listing_batch,
    fetch_query_images,
    fetch_taxon_observations,
)
from .inventory import extract_species_inventory
from .ratelimit import RateLimiter, with_retries
from .taxonomy import (
    LexicalTaxonomy,
    caption_excludes_taxon,
    filter_captioned_corpus,
    load_default_taxonomy,
    tokenize,
)

__all__ = [
    "ListingSource",
    "MockListingSource",
    "MockObservationSource",
    "MockSearchEngine",
    "ObservationSource",
    "SearchEngine",
    "RetriableFetchError",
    "download_listing_images",
    "fetch_listing_batch",
    "fetch_query_images",
    "fetch_taxon_observations",
    "extract_species_inventory",
    "RateLimiter",
    "with_retries",
    "LexicalTaxonomy",
    "caption_excludes_taxon",
    "filter_captioned_corpus",
    "load_default_taxonomy",
    "tokenize",
]
