//! Word lists for the synthetic world, in two languages.
//!
//! Topic words carry embeddings (topic direction plus a small per-word
//! perturbation); every other word class has a zero embedding.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::text::Language;

pub const MAX_TOPICS: usize = 8;

const TOPICS_EN: [[&str; 6]; MAX_TOPICS] = [
    ["recipe", "pasta", "oven", "spices", "baking", "dinner"],
    ["flights", "hotel", "itinerary", "beaches", "visa", "luggage"],
    ["python", "compiler", "debugging", "function", "rust", "database"],
    ["budget", "stocks", "savings", "taxes", "loan", "investing"],
    ["workout", "running", "protein", "stretching", "muscles", "cardio"],
    ["guitar", "chords", "melody", "piano", "concert", "lyrics"],
    ["empire", "ancient", "dynasty", "revolution", "medieval", "archives"],
    ["tomatoes", "soil", "compost", "seeds", "pruning", "flowers"],
];

const TOPICS_ZH: [[&str; 6]; MAX_TOPICS] = [
    ["食谱", "面条", "烤箱", "香料", "烘焙", "晚餐"],
    ["航班", "酒店", "行程", "海滩", "签证", "行李"],
    ["编程", "编译器", "调试", "函数", "代码", "数据库"],
    ["预算", "股票", "储蓄", "税务", "贷款", "投资"],
    ["锻炼", "跑步", "蛋白质", "拉伸", "肌肉", "有氧"],
    ["吉他", "和弦", "旋律", "钢琴", "音乐会", "歌词"],
    ["帝国", "古代", "王朝", "革命", "中世纪", "档案"],
    ["番茄", "土壤", "堆肥", "种子", "修剪", "花卉"],
];

const LEADS_EN: [&str; 4] = ["make", "add", "use", "provide"];
const LEADS_ZH: [&str; 4] = ["制作", "添加", "使用", "提供"];

const FILLERS_EN: [&str; 16] = [
    "how", "to", "the", "for", "with", "more", "about", "my", "best", "ideas", "tips", "explain",
    "what", "some", "in", "of",
];
const FILLERS_ZH: [&str; 16] = [
    "如何", "的", "一些", "关于", "更多", "我的", "最好", "建议", "技巧", "解释", "什么", "是", "在",
    "和", "给", "哪些",
];

const GENERIC_EN: [&str; 6] = ["engaging", "concise", "personal", "relatable", "formal", "specific"];
const GENERIC_ZH: [&str; 6] = ["有趣", "简洁", "个性化", "贴切", "正式", "具体"];

const JUNK_EN: [&str; 8] = ["zorp", "blick", "quux", "vexil", "drabb", "snorf", "glim", "wubba"];
const JUNK_ZH: [&str; 8] = ["咕噜", "嘎吱", "叽喳", "哐当", "呼噜", "扑通", "滴答", "咚锵"];

const STUBS_EN: [&str; 4] = ["hello", "hi", "thanks", "ok"];
const STUBS_ZH: [&str; 4] = ["你好", "嗨", "谢谢", "好的"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordClass {
    Topic(usize),
    Lead,
    Filler,
    Generic,
    Junk,
    Stub,
}

/// Words and topic geometry of one world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub n_topics: usize,
    pub embed_dim: usize,
    /// Unit topic directions.
    pub topic_dirs: Vec<Vec<f64>>,
    /// Embedding of each topic word, indexed `[language][topic][word]`.
    pub word_embeddings: Vec<Vec<Vec<Vec<f64>>>>,
}

pub(crate) fn lang_index(l: Language) -> usize {
    match l {
        Language::En => 0,
        Language::Zh => 1,
    }
}

fn topic_words(l: Language) -> &'static [[&'static str; 6]; MAX_TOPICS] {
    match l {
        Language::En => &TOPICS_EN,
        Language::Zh => &TOPICS_ZH,
    }
}

pub fn leads(l: Language) -> &'static [&'static str] {
    match l {
        Language::En => &LEADS_EN,
        Language::Zh => &LEADS_ZH,
    }
}

pub fn fillers(l: Language) -> &'static [&'static str] {
    match l {
        Language::En => &FILLERS_EN,
        Language::Zh => &FILLERS_ZH,
    }
}

pub fn generics(l: Language) -> &'static [&'static str] {
    match l {
        Language::En => &GENERIC_EN,
        Language::Zh => &GENERIC_ZH,
    }
}

pub fn junk(l: Language) -> &'static [&'static str] {
    match l {
        Language::En => &JUNK_EN,
        Language::Zh => &JUNK_ZH,
    }
}

pub fn stubs(l: Language) -> &'static [&'static str] {
    match l {
        Language::En => &STUBS_EN,
        Language::Zh => &STUBS_ZH,
    }
}

pub fn unit_vector<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

impl Lexicon {
    pub fn generate(seed: u64, n_topics: usize, embed_dim: usize, word_jitter: f64) -> Self {
        let mut rng = rng::stream(seed, "lexicon");
        let topic_dirs: Vec<Vec<f64>> = (0..n_topics).map(|_| unit_vector(embed_dim, &mut rng)).collect();
        let word_embeddings = [Language::En, Language::Zh]
            .iter()
            .map(|_| {
                topic_dirs
                    .iter()
                    .map(|dir| {
                        (0..6)
                            .map(|_| {
                                dir.iter()
                                    .map(|d| {
                                        let e: f64 = StandardNormal.sample(&mut rng);
                                        d + word_jitter * e
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self {
            n_topics,
            embed_dim,
            topic_dirs,
            word_embeddings,
        }
    }

    pub fn topic_word(&self, lang: Language, topic: usize, k: usize) -> &'static str {
        topic_words(lang)[topic][k]
    }

    /// Classify a token; `None` for words outside the lexicon.
    pub fn classify(&self, token: &str) -> Option<(Language, WordClass)> {
        word_table().get(token).copied().filter(|(_, c)| match c {
            WordClass::Topic(t) => *t < self.n_topics,
            _ => true,
        })
    }

    pub fn embedding_of(&self, token: &str) -> Option<&[f64]> {
        let (lang, class) = self.classify(token)?;
        if let WordClass::Topic(t) = class {
            let k = topic_words(lang)[t].iter().position(|w| *w == token)?;
            Some(&self.word_embeddings[lang_index(lang)][t][k])
        } else {
            None
        }
    }
}

fn word_table() -> &'static HashMap<&'static str, (Language, WordClass)> {
    use std::sync::OnceLock;
    static TABLE: OnceLock<HashMap<&'static str, (Language, WordClass)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut m = HashMap::new();
        for lang in [Language::En, Language::Zh] {
            for (t, ws) in topic_words(lang).iter().enumerate() {
                for w in ws {
                    m.insert(*w, (lang, WordClass::Topic(t)));
                }
            }
            for w in leads(lang) {
                m.insert(*w, (lang, WordClass::Lead));
            }
            for w in fillers(lang) {
                m.insert(*w, (lang, WordClass::Filler));
            }
            for w in generics(lang) {
                m.insert(*w, (lang, WordClass::Generic));
            }
            for w in junk(lang) {
                m.insert(*w, (lang, WordClass::Junk));
            }
            for w in stubs(lang) {
                m.insert(*w, (lang, WordClass::Stub));
            }
        }
        m
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_word_is_unique_across_classes() {
        let mut n = 0;
        for lang in [Language::En, Language::Zh] {
            n += 6 * MAX_TOPICS + leads(lang).len() + fillers(lang).len() + generics(lang).len()
                + junk(lang).len() + stubs(lang).len();
        }
        assert_eq!(word_table().len(), n);
    }

    #[test]
    fn topic_words_have_embeddings() {
        let lex = Lexicon::generate(3, 8, 6, 0.15);
        assert_eq!(lex.embedding_of("pasta").unwrap().len(), 6);
        assert!(lex.embedding_of("how").is_none());
        assert_eq!(lex.classify("zorp"), Some((Language::En, WordClass::Junk)));
    }
}
