//! Desk-scale generator of clean, country-formatted addresses.
//!
//! Produces V0-style samples (the six original tags, lowercase, Province
//! always present, PostalCode and Unit optional) for a handful of countries
//! so the whole pipeline can run without external data.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::ingest::Corpus;
use crate::schema::{to_bio, BaseTag, Sample};
use crate::seed;

/// Countries used for training/testing in the bundled examples.
pub const TRAIN_COUNTRIES: [&str; 10] = ["de", "fr", "it", "es", "nl", "us", "gb", "br", "pl", "se"];

/// Countries held out as zero-shot data.
pub const ZERO_SHOT_COUNTRIES: [&str; 4] = ["at", "pt", "ca", "au"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Street,
    Number,
    Unit,
    Postal,
    City,
    Province,
}

struct CountryFormat {
    iso: &'static str,
    order: &'static [Slot],
    street_patterns: &'static [&'static str],
    street_stems: &'static [&'static str],
    /// `9` = digit, `a` = letter, anything else literal; spaces split words.
    postal: &'static str,
    unit_patterns: &'static [&'static str],
    places: &'static [(&'static str, &'static str)],
    number_suffixes: bool,
}

use Slot::*;

const EU_ORDER: &[Slot] = &[Street, Number, Unit, Postal, City, Province];
const NA_ORDER: &[Slot] = &[Number, Street, Unit, City, Province, Postal];
const BR_ORDER: &[Slot] = &[Street, Number, Unit, City, Province, Postal];
const FR_ORDER: &[Slot] = &[Number, Street, Unit, Postal, City, Province];

const FORMATS: &[CountryFormat] = &[
    CountryFormat {
        iso: "de",
        order: EU_ORDER,
        street_patterns: &["{}str.", "{}strasse", "{}weg", "{}platz", "{}allee"],
        street_stems: &["haupt", "bahnhof", "schiller", "goethe", "linden", "berg", "kirchen", "garten", "jakob-sturm-", "mozart", "wald", "sonnen"],
        postal: "99999",
        unit_patterns: &["wohnung {}", "whg. {}"],
        places: &[("munich", "bavaria"), ("berlin", "berlin"), ("hamburg", "hamburg"), ("koln", "nordrhein-westfalen"), ("frankfurt am main", "hessen"), ("stuttgart", "baden-wurttemberg"), ("dusseldorf", "nordrhein-westfalen"), ("leipzig", "sachsen"), ("dresden", "sachsen"), ("hannover", "niedersachsen"), ("nurnberg", "bavaria"), ("bremen", "bremen")],
        number_suffixes: true,
    },
    CountryFormat {
        iso: "fr",
        order: FR_ORDER,
        street_patterns: &["rue {}", "avenue {}", "boulevard {}", "rue de la {}", "chemin des {}", "place {}"],
        street_stems: &["victor hugo", "jean jaures", "republique", "paix", "gare", "lilas", "moulin", "pasteur", "liberte", "chateau", "vignes"],
        postal: "99999",
        unit_patterns: &["apt {}", "bat {}", "appartement {}"],
        places: &[("paris", "ile-de-france"), ("lyon", "auvergne-rhone-alpes"), ("marseille", "provence-alpes-cote-d-azur"), ("toulouse", "occitanie"), ("nice", "provence-alpes-cote-d-azur"), ("nantes", "pays de la loire"), ("strasbourg", "grand est"), ("lille", "hauts-de-france"), ("bordeaux", "nouvelle-aquitaine"), ("rennes", "bretagne")],
        number_suffixes: false,
    },
    CountryFormat {
        iso: "it",
        order: EU_ORDER,
        street_patterns: &["via {}", "viale {}", "piazza {}", "corso {}", "vicolo {}"],
        street_stems: &["roma", "garibaldi", "dante", "mazzini", "verdi", "cavour", "vittorio emanuele", "marconi", "matteotti", "dei mille"],
        postal: "99999",
        unit_patterns: &["interno {}", "scala {}"],
        places: &[("milano", "lombardia"), ("roma", "lazio"), ("napoli", "campania"), ("torino", "piemonte"), ("palermo", "sicilia"), ("genova", "liguria"), ("bologna", "emilia-romagna"), ("firenze", "toscana"), ("bari", "puglia"), ("venezia", "veneto")],
        number_suffixes: false,
    },
    CountryFormat {
        iso: "es",
        order: EU_ORDER,
        street_patterns: &["calle {}", "avenida {}", "plaza {}", "paseo de {}", "carrer {}"],
        street_stems: &["mayor", "alcala", "gran via", "sol", "castellana", "san juan", "colon", "goya", "serrano", "real"],
        postal: "99999",
        unit_patterns: &["piso {}", "puerta {}"],
        places: &[("madrid", "madrid"), ("barcelona", "cataluna"), ("valencia", "comunidad valenciana"), ("sevilla", "andalucia"), ("zaragoza", "aragon"), ("malaga", "andalucia"), ("bilbao", "pais vasco"), ("murcia", "murcia"), ("palma", "islas baleares"), ("valladolid", "castilla y leon")],
        number_suffixes: false,
    },
    CountryFormat {
        iso: "nl",
        order: EU_ORDER,
        street_patterns: &["{}straat", "{}weg", "{}laan", "{}gracht", "{}plein"],
        street_stems: &["kerk", "dorps", "molen", "prinsen", "keizers", "heren", "stations", "school", "wilhelmina", "beatrix"],
        postal: "9999 aa",
        unit_patterns: &["bus {}"],
        places: &[("amsterdam", "noord-holland"), ("rotterdam", "zuid-holland"), ("den haag", "zuid-holland"), ("utrecht", "utrecht"), ("eindhoven", "noord-brabant"), ("groningen", "groningen"), ("tilburg", "noord-brabant"), ("almere", "flevoland"), ("breda", "noord-brabant"), ("nijmegen", "gelderland")],
        number_suffixes: true,
    },
    CountryFormat {
        iso: "us",
        order: NA_ORDER,
        street_patterns: &["{} st", "{} ave", "{} blvd", "{} rd", "{} dr", "{} street", "{} avenue"],
        street_stems: &["main", "oak", "maple", "washington", "lake", "park", "5th", "elm", "pine", "cedar", "sunset", "n broadway"],
        postal: "99999",
        unit_patterns: &["apt {}", "suite {}", "unit {}", "#{}"],
        places: &[("new york", "ny"), ("los angeles", "california"), ("chicago", "illinois"), ("houston", "tx"), ("phoenix", "arizona"), ("philadelphia", "pennsylvania"), ("san antonio", "texas"), ("san diego", "ca"), ("dallas", "texas"), ("seattle", "washington"), ("boston", "massachusetts"), ("denver", "colorado")],
        number_suffixes: false,
    },
    CountryFormat {
        iso: "gb",
        order: &[Unit, Number, Street, City, Province, Postal],
        street_patterns: &["{} road", "{} street", "{} lane", "{} close", "{} avenue", "{} way"],
        street_stems: &["church", "station", "victoria", "queens", "mill", "park", "london", "kings", "high", "manor"],
        postal: "aa9 9aa",
        unit_patterns: &["flat {}", "unit {}"],
        places: &[("london", "greater london"), ("birmingham", "west midlands"), ("manchester", "greater manchester"), ("leeds", "west yorkshire"), ("liverpool", "merseyside"), ("bristol", "bristol"), ("sheffield", "south yorkshire"), ("leicester", "leicestershire"), ("nottingham", "nottinghamshire"), ("oxford", "oxfordshire")],
        number_suffixes: false,
    },
    CountryFormat {
        iso: "br",
        order: BR_ORDER,
        street_patterns: &["rua {}", "avenida {}", "travessa {}", "tv {}", "alameda {}"],
        street_stems: &["sao joao", "sete de setembro", "das flores", "boa vista", "tiradentes", "santos dumont", "paulista", "xv de novembro", "sd"],
        postal: "99999-999",
        unit_patterns: &["apto {}", "sala {}", "casa {}"],
        places: &[("sao paulo", "sao paulo"), ("rio de janeiro", "rio de janeiro"), ("salvador", "bahia"), ("fortaleza", "ceara"), ("belo horizonte", "minas gerais"), ("manaus", "amazonas"), ("curitiba", "parana"), ("recife", "pernambuco"), ("japaratinga", "alagoas"), ("porto alegre", "rio grande do sul")],
        number_suffixes: false,
    },
    CountryFormat {
        iso: "pl",
        order: EU_ORDER,
        street_patterns: &["ul. {}", "ulica {}", "al. {}", "plac {}"],
        street_stems: &["marszalkowska", "dluga", "kwiatowa", "lipowa", "polna", "sloneczna", "mickiewicza", "kosciuszki", "szkolna", "lesna"],
        postal: "99-999",
        unit_patterns: &["m. {}", "lok. {}"],
        places: &[("warszawa", "mazowieckie"), ("krakow", "malopolskie"), ("lodz", "lodzkie"), ("wroclaw", "dolnoslaskie"), ("poznan", "wielkopolskie"), ("gdansk", "pomorskie"), ("szczecin", "zachodniopomorskie"), ("lublin", "lubelskie"), ("katowice", "slaskie"), ("bialystok", "podlaskie")],
        number_suffixes: true,
    },
    CountryFormat {
        iso: "se",
        order: EU_ORDER,
        street_patterns: &["{}gatan", "{}vagen", "{}torget", "{}grand"],
        street_stems: &["drottning", "kungs", "stor", "sveav", "linne", "skol", "kyrko", "strand", "hamn", "back"],
        postal: "999 99",
        unit_patterns: &["lgh {}"],
        places: &[("stockholm", "stockholms lan"), ("goteborg", "vastra gotaland"), ("malmo", "skane"), ("uppsala", "uppsala lan"), ("vasteras", "vastmanland"), ("orebro", "orebro lan"), ("linkoping", "ostergotland"), ("helsingborg", "skane"), ("jonkoping", "jonkopings lan"), ("umea", "vasterbotten")],
        number_suffixes: true,
    },
    CountryFormat {
        iso: "at",
        order: EU_ORDER,
        street_patterns: &["{}gasse", "{}strasse", "{}str", "{}platz", "{}weg"],
        street_stems: &["kirchen", "haupt", "schul", "linzer", "wiener", "mariahilfer", "berg", "muhl", "bahnhof", "dorf"],
        postal: "9999",
        unit_patterns: &["top {}", "stiege {}"],
        places: &[("wien", "wien"), ("graz", "steiermark"), ("linz", "oberosterreich"), ("salzburg", "salzburg"), ("innsbruck", "tirol"), ("klagenfurt", "karnten"), ("gemeinde klein pochlarn", "niederosterreich"), ("st. polten", "niederosterreich"), ("dornbirn", "vorarlberg"), ("eisenstadt", "burgenland")],
        number_suffixes: true,
    },
    CountryFormat {
        iso: "pt",
        order: EU_ORDER,
        street_patterns: &["rua {}", "avenida {}", "travessa do {}", "largo {}"],
        street_stems: &["augusta", "liberdade", "carmo", "das flores", "da prata", "almirante reis", "santa catarina", "do ouro"],
        postal: "9999-999",
        unit_patterns: &["andar {}", "esq {}"],
        places: &[("lisboa", "lisboa"), ("porto", "porto"), ("braga", "braga"), ("coimbra", "coimbra"), ("faro", "faro"), ("aveiro", "aveiro"), ("setubal", "setubal"), ("funchal", "madeira")],
        number_suffixes: false,
    },
    CountryFormat {
        iso: "ca",
        order: NA_ORDER,
        street_patterns: &["{} st", "{} ave", "rue {}", "{} blvd", "{} rd"],
        street_stems: &["yonge", "king", "queen", "saint-denis", "sherbrooke", "main", "maple", "wellington", "bay", "bloor"],
        postal: "a9a 9a9",
        unit_patterns: &["apt {}", "suite {}"],
        places: &[("toronto", "ontario"), ("montreal", "quebec"), ("vancouver", "british columbia"), ("calgary", "alberta"), ("ottawa", "on"), ("edmonton", "alberta"), ("winnipeg", "manitoba"), ("quebec", "qc"), ("halifax", "nova scotia"), ("victoria", "bc")],
        number_suffixes: false,
    },
    CountryFormat {
        iso: "au",
        order: NA_ORDER,
        street_patterns: &["{} st", "{} rd", "{} parade", "{} tce", "{} hwy"],
        street_stems: &["george", "collins", "elizabeth", "pitt", "bourke", "queen", "william", "swanston", "flinders", "murray"],
        postal: "9999",
        unit_patterns: &["unit {}", "level {}"],
        places: &[("sydney", "nsw"), ("melbourne", "victoria"), ("brisbane", "queensland"), ("perth", "wa"), ("adelaide", "south australia"), ("hobart", "tasmania"), ("darwin", "northern territory"), ("canberra", "act"), ("geelong", "vic"), ("cairns", "qld")],
        number_suffixes: false,
    },
];

fn format_for(iso: &str) -> Option<&'static CountryFormat> {
    FORMATS.iter().find(|f| f.iso == iso)
}

/// Country codes the generator knows.
pub fn supported_countries() -> impl Iterator<Item = &'static str> {
    FORMATS.iter().map(|f| f.iso)
}

fn fill_pattern<R: Rng + ?Sized>(rng: &mut R, pattern: &str) -> String {
    pattern
        .chars()
        .map(|c| match c {
            '9' => char::from(b'0' + rng.random_range(0..10u8)),
            'a' => char::from(b'a' + rng.random_range(0..26u8)),
            other => other,
        })
        .collect()
}

fn street_number<R: Rng + ?Sized>(rng: &mut R, suffixes: bool) -> String {
    let n = if rng.random_bool(0.7) { rng.random_range(1..100) } else { rng.random_range(100..2500) };
    if suffixes && rng.random_bool(0.1) {
        format!("{n}{}", char::from(b'a' + rng.random_range(0..4u8)))
    } else if rng.random_bool(0.04) {
        format!("{n}-{}", n + 2)
    } else {
        n.to_string()
    }
}

fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(String::from).collect()
}

fn generate_one<R: Rng + ?Sized>(rng: &mut R, fmt: &CountryFormat, id: String) -> Sample {
    let has_postal = rng.random_bool(0.9);
    let has_unit = rng.random_bool(0.1);
    let (city, province) = *fmt.places.choose(rng).expect("places");
    let mut tokens: Vec<String> = Vec::new();
    let mut tags: Vec<BaseTag> = Vec::new();
    for slot in fmt.order {
        let (field, tag) = match slot {
            Street => {
                let pattern = fmt.street_patterns.choose(rng).expect("patterns");
                let stem = fmt.street_stems.choose(rng).expect("stems");
                (words(&pattern.replace("{}", stem)), BaseTag::StreetName)
            }
            Number => (vec![street_number(rng, fmt.number_suffixes)], BaseTag::StreetNumber),
            Unit if has_unit => {
                let pattern = fmt.unit_patterns.choose(rng).expect("units");
                (words(&pattern.replace("{}", &rng.random_range(1..40).to_string())), BaseTag::Unit)
            }
            Postal if has_postal => (words(&fill_pattern(rng, fmt.postal)), BaseTag::PostalCode),
            City => (words(city), BaseTag::Municipality),
            Province => (words(province), BaseTag::Province),
            Unit | Postal => continue,
        };
        tags.extend(std::iter::repeat_n(tag, field.len()));
        tokens.extend(field);
    }
    Sample {
        id,
        labels: to_bio(&tags),
        words: tokens,
        country: Some(fmt.iso.to_string()),
    }
}

/// Generates `per_country` samples for each listed country, deterministic in
/// `seed`. Unknown country codes are skipped.
pub fn generate(countries: &[&str], per_country: usize, seed: u64) -> Corpus {
    let mut samples = Vec::with_capacity(countries.len() * per_country);
    for iso in countries {
        let Some(fmt) = format_for(iso) else { continue };
        let mut rng = seed::stream(seed, &format!("desk:{iso}"));
        for i in 0..per_country {
            samples.push(generate_one(&mut rng, fmt, format!("{iso}-{i}")));
        }
    }
    Corpus::new(samples, format!("desk corpus (seed {seed})"))
}
