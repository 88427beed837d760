//! Bundled toy data: a small templated corpus with real toneless pinyin,
//! procedurally drawn glyphs in which look-alike groups share strokes, and
//! synthetic spelling errors drawn from homophone and look-alike partners.
//!
//! The test set holds sentences absent from training, corrupted with
//! homophones from the training pools. Each pool also reserves one
//! substitute that never appears in training; a second test set uses only
//! those, so its errors are characters the model has never seen.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chardata::{write_glyphs, GlyphAtlas, GlyphBitmap, PinyinCode, PinyinTable, GLYPH_PIXELS, GLYPH_SIDE};
use crate::corpus::{synthesize_errors, write_parallel, Example};
use crate::error::{Error, Result};
use crate::macu::{char_similarity, graphemic_features, phonetic_features, ConfusionKind, ConfusionPair, ConfusionSet};

const SUBJECTS: &[&str] = &[
    "我", "你", "他", "我们", "你们", "他们", "老师", "学生", "妈妈", "爸爸", "朋友", "医生",
];
const TIMES: &[&str] = &["今天", "明天", "昨天", "早上", "晚上", "下午", "周末"];
const ADVERBS: &[&str] = &["都", "也", "还", "一起"];
const PHRASES: &[&str] = &[
    "去市场",
    "看电视",
    "写作业",
    "吃米饭",
    "喝牛奶",
    "买水果",
    "读书",
    "打电话",
    "做饭",
    "听音乐",
    "学中文",
    "坐公交",
    "回家",
    "洗衣服",
    "跑步",
    "上班",
    "开会",
    "看电影",
];

/// Toneless reading, characters used in sentences, substitutes for training
/// and test errors, substitute reserved for the unseen-character test set.
const HOMOPHONES: &[(&str, &str, &str, &str)] = &[
    ("wo", "我", "窝沃握", "卧"),
    ("ni", "你", "尼泥拟", "逆"),
    ("ta", "他", "塔踏塌", "獭"),
    ("men", "们", "门闷", "焖"),
    ("lao", "老", "劳牢捞", "涝"),
    ("shi", "师市视", "诗狮施湿", "失"),
    ("xue", "学", "雪穴靴", "薛"),
    ("sheng", "生", "声升牲", "甥"),
    ("ma", "妈", "麻马码", "骂"),
    ("ba", "爸", "八巴吧", "疤"),
    ("peng", "朋", "棚蓬鹏", "膨"),
    ("you", "友", "油右游", "邮"),
    ("yi", "医衣一", "依伊仪", "姨"),
    ("jin", "今", "金斤津", "筋"),
    ("tian", "天", "添田甜", "填"),
    ("ming", "明", "名鸣铭", "冥"),
    ("zuo", "昨作坐做", "左佐座", "祚"),
    ("zao", "早", "枣澡造", "燥"),
    ("shang", "上", "伤商赏", "尚"),
    ("wan", "晚", "碗弯湾", "万"),
    ("xia", "下", "夏虾峡", "霞"),
    ("wu", "午", "五舞雾", "屋"),
    ("zhou", "周", "州洲粥", "舟"),
    ("mo", "末", "磨摸墨", "魔"),
    ("dou", "都", "斗豆逗", "抖"),
    ("ye", "也业", "夜叶页", "野"),
    ("hai", "还", "海害孩", "亥"),
    ("qi", "起", "气七期", "齐"),
    ("qu", "去", "区趣曲", "渠"),
    ("chang", "场", "长唱厂", "肠"),
    ("kan", "看", "砍刊勘", "堪"),
    ("dian", "电", "店点典", "垫"),
    ("xie", "写", "些鞋谢", "协"),
    ("chi", "吃", "池迟尺", "齿"),
    ("mi", "米", "迷密蜜", "谜"),
    ("fan", "饭", "反犯范", "翻"),
    ("he", "喝", "河和盒", "荷"),
    ("niu", "牛", "扭纽妞", "钮"),
    ("nai", "奶", "耐乃奈", "氖"),
    ("mai", "买", "麦埋迈", "脉"),
    ("shui", "水", "睡税", "谁"),
    ("guo", "果", "国锅郭", "裹"),
    ("du", "读", "毒独度", "肚"),
    ("shu", "书", "输舒叔", "树"),
    ("da", "打", "达答搭", "哒"),
    ("hua", "话", "化画华", "划"),
    ("ting", "听", "停亭厅", "挺"),
    ("yin", "音", "阴银印", "引"),
    ("yue", "乐", "月越跃", "阅"),
    ("zhong", "中", "钟种众", "忠"),
    ("wen", "文", "问闻温", "稳"),
    ("gong", "公", "工功攻", "宫"),
    ("jiao", "交", "教叫角", "脚"),
    ("hui", "回会", "灰挥辉", "惠"),
    ("jia", "家", "加佳假", "价"),
    ("xi", "洗", "西喜习", "细"),
    ("fu", "服", "父富福", "副"),
    ("pao", "跑", "泡炮抛", "袍"),
    ("bu", "步", "不布部", "补"),
    ("ban", "班", "般搬板", "版"),
    ("kai", "开", "凯慨楷", "铠"),
    ("ying", "影", "应英赢", "营"),
];

/// Groups whose glyphs are drawn from a shared base.
const LOOKALIKES: &[&str] = &[
    "大太犬",
    "人入",
    "土士王",
    "日曰目白",
    "己已巳",
    "末未",
    "午牛",
    "贝见",
    "刀力",
    "我找",
    "老考",
    "明朋",
    "电由甩",
    "米来",
    "水永冰",
    "果里",
    "话活",
    "中申",
    "开井",
    "影景",
    "还环",
    "起赶",
    "作怎",
    "衣农",
    "服报",
    "天夫",
    "上止",
    "下卞",
    "去云",
    "市币",
    "买头",
    "写与",
    "业亚",
    "都者",
    "们闪",
    "学字",
    "洗先",
    "早旱",
    "晚免",
];

/// Readings of look-alike characters that are not in a homophone pool.
const EXTRA_READINGS: &[(char, &str)] = &[
    ('大', "da"),
    ('太', "tai"),
    ('犬', "quan"),
    ('人', "ren"),
    ('入', "ru"),
    ('土', "tu"),
    ('士', "shi"),
    ('王', "wang"),
    ('日', "ri"),
    ('曰', "yue"),
    ('目', "mu"),
    ('白', "bai"),
    ('己', "ji"),
    ('已', "yi"),
    ('巳', "si"),
    ('未', "wei"),
    ('贝', "bei"),
    ('见', "jian"),
    ('刀', "dao"),
    ('力', "li"),
    ('找', "zhao"),
    ('考', "kao"),
    ('由', "you"),
    ('甩', "shuai"),
    ('来', "lai"),
    ('永', "yong"),
    ('冰', "bing"),
    ('里', "li"),
    ('活', "huo"),
    ('申', "shen"),
    ('井', "jing"),
    ('景', "jing"),
    ('环', "huan"),
    ('赶', "gan"),
    ('怎', "zen"),
    ('农', "nong"),
    ('报', "bao"),
    ('夫', "fu"),
    ('止', "zhi"),
    ('卞', "bian"),
    ('云', "yun"),
    ('币', "bi"),
    ('头', "tou"),
    ('与', "yu"),
    ('亚', "ya"),
    ('者', "zhe"),
    ('闪', "shan"),
    ('字', "zi"),
    ('先', "xian"),
    ('旱', "han"),
    ('免', "mian"),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub train_sentences: usize,
    pub test_sentences: usize,
    pub train_error_rate: f64,
    pub test_error_rate: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            train_sentences: 500,
            test_sentences: 100,
            train_error_rate: 0.15,
            test_error_rate: 0.15,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ToyData {
    pub pinyin: PinyinTable,
    pub glyphs: GlyphAtlas,
    pub train: Vec<Example>,
    /// Held-out sentences with homophone errors from the training pools.
    pub test: Vec<Example>,
    /// The same held-out sentences with errors from reserved homophones only.
    pub test_unseen: Vec<Example>,
    /// Pairs used to corrupt the training set.
    pub train_confusion: ConfusionSet,
    /// Homophone pairs used to corrupt `test`.
    pub test_confusion: ConfusionSet,
    /// Reserved pairs used to corrupt `test_unseen`.
    pub unseen_confusion: ConfusionSet,
}

impl ToyData {
    /// Write `pinyin.tsv`, `glyphs.gly`, `train.tsv`, `test.tsv`,
    /// `test_unseen.tsv` and the confusion sets as JSON.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("pinyin.tsv");
        fs::write(&p, self.pinyin.to_tsv()).map_err(|e| Error::io(&p, e))?;
        write_glyphs(dir.join("glyphs.gly"), &self.glyphs)?;
        write_parallel(dir.join("train.tsv"), &self.train)?;
        write_parallel(dir.join("test.tsv"), &self.test)?;
        write_parallel(dir.join("test_unseen.tsv"), &self.test_unseen)?;
        for (name, set) in [
            ("train_confusion.json", &self.train_confusion),
            ("test_confusion.json", &self.test_confusion),
            ("unseen_confusion.json", &self.unseen_confusion),
        ] {
            let p = dir.join(name);
            fs::write(&p, serde_json::to_string_pretty(set)?).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

fn pinyin_table() -> Result<PinyinTable> {
    let mut entries = Vec::new();
    for &(reading, used, train, test) in HOMOPHONES {
        let code = PinyinCode::from_reading(reading).map_err(Error::Config)?;
        for c in used.chars().chain(train.chars()).chain(test.chars()) {
            entries.push((c, code));
        }
    }
    for &(c, reading) in EXTRA_READINGS {
        entries.push((c, PinyinCode::from_reading(reading).map_err(Error::Config)?));
    }
    let mut seen = HashSet::new();
    if let Some((dup, _)) = entries.iter().find(|(c, _)| !seen.insert(*c)) {
        return Err(Error::Config(format!("toy lexicon lists {dup} twice")));
    }
    Ok(PinyinTable::from_entries(entries))
}

fn draw_stroke(px: &mut [f32], rng: &mut ChaCha8Rng, max_len: usize) {
    let lo = 3i32;
    let hi = GLYPH_SIDE as i32 - 4;
    let len = rng.gen_range(4..=max_len) as i32;
    let (r0, c0) = (rng.gen_range(lo..=hi), rng.gen_range(lo..=hi));
    let (dr, dc) = *[(0, 1), (1, 0), (1, 1), (1, -1)].choose(rng).expect("non-empty");
    for t in 0..len {
        let (r, c) = (r0 + dr * t, c0 + dc * t);
        if (lo..=hi).contains(&r) && (lo..=hi).contains(&c) {
            px[r as usize * GLYPH_SIDE + c as usize] = 1.0;
        }
    }
}

fn component(rng: &mut ChaCha8Rng, strokes: usize) -> Vec<f32> {
    let mut px = vec![0.0; GLYPH_PIXELS];
    for _ in 0..strokes {
        draw_stroke(&mut px, rng, 20);
    }
    px
}

/// Unrelated characters get independent strokes; members of a look-alike
/// group share a base and differ by one short stroke each.
fn draw_glyphs(chars: &BTreeSet<char>, seed: u64) -> Result<GlyphAtlas> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut atlas = GlyphAtlas::default();
    for group in LOOKALIKES {
        let base = component(&mut rng, 5);
        for c in group.chars() {
            let mut px = base.clone();
            draw_stroke(&mut px, &mut rng, 6);
            atlas.insert(c, GlyphBitmap::from_pixels(px)?);
        }
    }
    for &c in chars {
        if atlas.get(c).is_none() {
            atlas.insert(c, GlyphBitmap::from_pixels(component(&mut rng, 5))?);
        }
    }
    Ok(atlas)
}

fn sentences(n: usize, rng: &mut ChaCha8Rng, taken: &mut HashSet<String>) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > n * 1000 {
            return Err(Error::Config(format!("could not draw {n} distinct toy sentences")));
        }
        let mut s = String::new();
        s.push_str(SUBJECTS.choose(rng).expect("subjects"));
        s.push_str(TIMES.choose(rng).expect("times"));
        if rng.gen_bool(0.4) {
            s.push_str(ADVERBS.choose(rng).expect("adverbs"));
        }
        s.push_str(PHRASES.choose(rng).expect("phrases"));
        if taken.insert(s.clone()) {
            out.push(s);
        }
    }
    Ok(out)
}

fn pair(a: char, b: char, kind: ConfusionKind, pinyin: &PinyinTable, glyphs: &GlyphAtlas) -> Result<ConfusionPair> {
    let s = match kind {
        ConfusionKind::Phonetic => {
            char_similarity(&phonetic_features(pinyin.code(a)), &phonetic_features(pinyin.code(b)))?
        }
        ConfusionKind::Graphemic => char_similarity(
            &graphemic_features(glyphs.bitmap(a)),
            &graphemic_features(glyphs.bitmap(b)),
        )?,
    };
    Ok(ConfusionPair::new(a, b, s))
}

pub fn generate(cfg: &ToyConfig) -> Result<ToyData> {
    let pinyin = pinyin_table()?;
    let all: BTreeSet<char> = pinyin.entries().map(|(c, _)| c).collect();
    let glyphs = draw_glyphs(&all, cfg.seed)?;
    let used: HashSet<char> = HOMOPHONES.iter().flat_map(|h| h.1.chars()).collect();

    let mut train_pairs = Vec::new();
    let mut unseen_pairs = Vec::new();
    for &(_, lex, train, reserved) in HOMOPHONES {
        for c in lex.chars() {
            for t in train.chars() {
                train_pairs.push(pair(c, t, ConfusionKind::Phonetic, &pinyin, &glyphs)?);
            }
            for t in reserved.chars() {
                unseen_pairs.push(pair(c, t, ConfusionKind::Phonetic, &pinyin, &glyphs)?);
            }
        }
    }
    let mut graphemic = Vec::new();
    for group in LOOKALIKES {
        let members: Vec<char> = group.chars().collect();
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                if used.contains(&a) || used.contains(&b) {
                    graphemic.push(pair(a, b, ConfusionKind::Graphemic, &pinyin, &glyphs)?);
                }
            }
        }
    }
    let test_confusion = ConfusionSet::from_pairs(ConfusionKind::Phonetic, train_pairs)?;
    let graphemic = ConfusionSet::from_pairs(ConfusionKind::Graphemic, graphemic)?;
    let train_confusion = test_confusion.merged(&graphemic);
    let unseen_confusion = ConfusionSet::from_pairs(ConfusionKind::Phonetic, unseen_pairs)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut taken = HashSet::new();
    let train_clean = sentences(cfg.train_sentences, &mut rng, &mut taken)?;
    let test_clean = sentences(cfg.test_sentences, &mut rng, &mut taken)?;
    let mut train = synthesize_errors(&train_clean, &train_confusion, cfg.train_error_rate, cfg.seed)?;
    let mut test = synthesize_errors(
        &test_clean,
        &test_confusion,
        cfg.test_error_rate,
        cfg.seed.wrapping_add(1),
    )?;
    let mut test_unseen = synthesize_errors(
        &test_clean,
        &unseen_confusion,
        cfg.test_error_rate,
        cfg.seed.wrapping_add(2),
    )?;
    for (i, e) in train.iter_mut().enumerate() {
        e.id = format!("train-{i:04}");
    }
    for (i, e) in test.iter_mut().enumerate() {
        e.id = format!("test-{i:04}");
    }
    for (i, e) in test_unseen.iter_mut().enumerate() {
        e.id = format!("unseen-{i:04}");
    }
    Ok(ToyData {
        pinyin,
        glyphs,
        train,
        test,
        test_unseen,
        train_confusion,
        test_confusion,
        unseen_confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_well_formed() {
        let cfg = ToyConfig {
            train_sentences: 50,
            test_sentences: 20,
            ..Default::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_eq!(a.train.len(), 50);
        let train_chars: HashSet<char> = a.train.iter().flat_map(|e| e.source.iter().copied()).collect();
        let reserved: HashSet<char> = HOMOPHONES.iter().flat_map(|h| h.3.chars()).collect();
        assert!(train_chars.is_disjoint(&reserved));
        for e in &a.test_unseen {
            for p in e.error_positions() {
                assert!(reserved.contains(&e.source[p]));
                assert_eq!(a.pinyin.get(e.source[p]), a.pinyin.get(e.target[p]));
            }
        }
        for e in &a.test {
            for p in e.error_positions() {
                assert!(!reserved.contains(&e.source[p]));
                assert_eq!(a.pinyin.get(e.source[p]), a.pinyin.get(e.target[p]));
            }
        }
        let clean = |x: &[Example]| x.iter().map(|e| e.target.clone()).collect::<Vec<_>>();
        assert_eq!(clean(&a.test), clean(&a.test_unseen));
        let train_targets: HashSet<Vec<char>> = a.train.iter().map(|e| e.target.clone()).collect();
        assert!(a.test.iter().all(|e| !train_targets.contains(&e.target)));
    }

    #[test]
    fn lookalikes_are_closer_than_strangers() {
        let data = generate(&ToyConfig {
            train_sentences: 1,
            test_sentences: 1,
            ..Default::default()
        })
        .unwrap();
        let s = |a: char, b: char| {
            char_similarity(
                &graphemic_features(data.glyphs.bitmap(a)),
                &graphemic_features(data.glyphs.bitmap(b)),
            )
            .unwrap()
        };
        assert!(s('午', '牛') > 0.85);
        assert!(s('午', '书') < s('午', '牛'));
    }
}
