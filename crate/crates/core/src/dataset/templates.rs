//! Prompt and answer templates. Lists without a task kind of their own
//! (free-text descriptions) are kept but never rendered.

pub const ACTIVITY: [(&str, &str); 17] = [
    (
        "{motion_placeholder} Identify the activity shown here",
        "{activity}",
    ),
    (
        "{motion_placeholder} What is this person doing?",
        "{activity}",
    ),
    (
        "{motion_placeholder} What specific action is being performed?",
        "{activity}",
    ),
    (
        "{motion_placeholder} Can you tell what activity is happening in this motion sequence?",
        "{activity}",
    ),
    (
        "{motion_placeholder} The primary action demonstrated by is what",
        "{activity}",
    ),
    (
        "{motion_placeholder} Describe the activity captured in the motion",
        "{activity}",
    ),
    (
        "{motion_placeholder} represents which activity",
        "{activity}",
    ),
    (
        "{motion_placeholder} What task is the subject performing in the sequence",
        "{activity}",
    ),
    (
        "{motion_placeholder} Based on, what is the person doing",
        "{activity}",
    ),
    (
        "{motion_placeholder} Determine the activity classification for",
        "{activity}",
    ),
    (
        "{motion_placeholder} This motion sequence, illustrates what activity",
        "{activity}",
    ),
    (
        "{motion_placeholder} How would you label the activity present in",
        "{activity}",
    ),
    ("{motion_placeholder} What is the activity", "{activity}"),
    (
        "{motion_placeholder} What activity is being performed in this motion sequence",
        "{activity}",
    ),
    (
        "{motion_placeholder} What activity is being performed in this motion sequence",
        "{activity}",
    ),
    (
        "{motion_placeholder} This motion sequence shows what activity",
        "{activity}",
    ),
    (
        "{motion_placeholder} What is being performed here",
        "{activity}",
    ),
];

pub const IMPAIRED: [(&str, &str); 15] = [
    (
        "{motion_placeholder} Does this person have a gait impairment?",
        "{movement_impairment}",
    ),
    (
        "{motion_placeholder} Does this person have a movement impairment?",
        "{movement_impairment}",
    ),
    (
        "{motion_placeholder} Looking at, is a movement impairment likely",
        "{movement_impairment}",
    ),
    (
        "{motion_placeholder} Does this suggest a potential movement impairment",
        "{movement_impairment}",
    ),
    (
        "{motion_placeholder} Is it probable that someone moving like in has a movement impairment",
        "{movement_impairment}",
    ),
    (
        "{motion_placeholder} Would you classify the motion as indicative of impairment",
        "{movement_impairment}",
    ),
    (
        "{motion_placeholder} Assess the likelihood of movement impairment based on",
        "{movement_impairment}",
    ),
    (
        "{motion_placeholder} Could this movement pattern signify an impairment",
        "{movement_impairment}",
    ),
    (
        "{motion_placeholder} Does the way the person moves in point towards a movement impairment",
        "{movement_impairment}",
    ),
    (
        "{motion_placeholder} Observing, is there evidence suggesting a movement impairment",
        "{movement_impairment}",
    ),
    (
        "{motion_placeholder} Could be associated with a movement impairment",
        "{movement_impairment}",
    ),
    (
        "{motion_placeholder} How likely is it that the motion sequence displays characteristics of impairment",
        "{movement_impairment}",
    ),
    (
        "{motion_placeholder} Evaluate for signs of movement impairment",
        "{movement_impairment}",
    ),
    (
        "{motion_placeholder} Based on the movement, is impairment a possibility",
        "{movement_impairment}",
    ),
    (
        "{motion_placeholder} Does someone who moves like this likely have a movement impairment",
        "{movement_impairment}",
    ),
];

pub const DIAGNOSIS: [(&str, &str); 16] = [
    (
        "{motion_placeholder} What is a likely etiology for their gait impairment?",
        "{diagnosis}",
    ),
    (
        "{motion_placeholder} What is the most likely diagnosis for their gait impairment?",
        "{diagnosis}",
    ),
    (
        "{motion_placeholder} could be indicative of what diagnosis",
        "{diagnosis}",
    ),
    (
        "{motion_placeholder} What medical diagnosis might explain the motion seen in",
        "{diagnosis}",
    ),
    (
        "{motion_placeholder} Identify a potential diagnosis associated with the movement pattern",
        "{diagnosis}",
    ),
    (
        "{motion_placeholder} Which diagnosis is commonly linked to this type of motion",
        "{diagnosis}",
    ),
    (
        "{motion_placeholder} A person exhibiting movements like might have what diagnosis",
        "{diagnosis}",
    ),
    (
        "{motion_placeholder} Suggest a possible diagnosis based on the motion sequence",
        "{diagnosis}",
    ),
    (
        "{motion_placeholder} What underlying condition could cause this motion",
        "{diagnosis}",
    ),
    (
        "{motion_placeholder} What diagnosis should be considered for someone moving as shown in",
        "{diagnosis}",
    ),
    (
        "{motion_placeholder} Could the motion be a symptom of a specific diagnosis",
        "{diagnosis}",
    ),
    (
        "{motion_placeholder} Link the motion pattern in to a likely diagnosis",
        "{diagnosis}",
    ),
    (
        "{motion_placeholder} Propose a relevant diagnosis",
        "{diagnosis}",
    ),
    (
        "{motion_placeholder} If a patient moves like, what diagnosis comes to mind",
        "{diagnosis}",
    ),
    (
        "{motion_placeholder} What diagnosis is likely associated with this motion",
        "{diagnosis}",
    ),
    (
        "{motion_placeholder} Someone that moves like this may have what diagnosis",
        "{diagnosis}",
    ),
];

pub const ASSISTIVE_DEVICE: [(&str, &str); 11] = [
    (
        "{motion_placeholder} What assistive device this person using?",
        "{assistive_device}",
    ),
    (
        "{motion_placeholder} What assistive device is used in this movement",
        "{assistive_device}",
    ),
    (
        "{motion_placeholder} Identify the assistive device present in the motion sequence",
        "{assistive_device}",
    ),
    (
        "{motion_placeholder} Which mobility aid, if any, is being utilized",
        "{assistive_device}",
    ),
    (
        "{motion_placeholder} Specify the assistive device employed by the person in",
        "{assistive_device}",
    ),
    (
        "{motion_placeholder} Can you determine the type of assistive device shown in",
        "{assistive_device}",
    ),
    (
        "{motion_placeholder} Name the support device used during the movement",
        "{assistive_device}",
    ),
    (
        "{motion_placeholder} What equipment is assisting the movement",
        "{assistive_device}",
    ),
    (
        "{motion_placeholder} Is an assistive device being used? If yes, what is it",
        "{assistive_device}",
    ),
    (
        "{motion_placeholder} Characterize the assistive device seen in",
        "{assistive_device}",
    ),
    (
        "{motion_placeholder} Assistive device used",
        "{assistive_device}",
    ),
];

pub const MOVEMENT_DESCRIPTION: [(&str, &str); 15] = [
    (
        "{motion_placeholder} How would you describe the movement in this motion sequence",
        "{verbal_description}",
    ),
    (
        "{motion_placeholder} Describe the movement pattern shown in",
        "{verbal_description}",
    ),
    (
        "{motion_placeholder} Provide a qualitative description of the motion",
        "{verbal_description}",
    ),
    (
        "{motion_placeholder} Characterize the manner of movement observed in",
        "{verbal_description}",
    ),
    (
        "{motion_placeholder} Can you give a verbal summary of the movement style in",
        "{verbal_description}",
    ),
    (
        "{motion_placeholder} Explain the characteristics of the motion depicted in",
        "{verbal_description}",
    ),
    (
        "{motion_placeholder} Summarize the key features of this movement",
        "{verbal_description}",
    ),
    (
        "{motion_placeholder} Offer a textual description for the motion sequence",
        "{verbal_description}",
    ),
    (
        "{motion_placeholder} What are the notable aspects of the movement shown in",
        "{verbal_description}",
    ),
    (
        "{motion_placeholder} Based on, describe how the person is moving",
        "{verbal_description}",
    ),
    (
        "{motion_placeholder} Detail the nature of the motion",
        "{verbal_description}",
    ),
    (
        "{motion_placeholder} Provide descriptive text for the movement in",
        "{verbal_description}",
    ),
    (
        "{motion_placeholder} Summarize the visual qualities of the motion in",
        "{verbal_description}",
    ),
    (
        "{motion_placeholder} Elaborate on the movement style presented",
        "{verbal_description}",
    ),
    (
        "{motion_placeholder} Give an overall description of the movement pattern in",
        "{verbal_description}",
    ),
];

pub const DESCRIPTION: [(&str, &str); 10] = [
    (
        "{motion_placeholder} Provide a plausible clinical one-liner for someone that moves like this",
        "{description}",
    ),
    (
        "{motion_placeholder} Suggest a likely clinical one-liner based on this movement pattern",
        "{description}",
    ),
    (
        "{motion_placeholder} What is a concise clinical impression suggested by this motion?",
        "{description}",
    ),
    (
        "{motion_placeholder} Briefly describe a potential clinical context for this movement",
        "{description}",
    ),
    (
        "{motion_placeholder} Infer a short clinical summary relevant to this motion pattern",
        "{description}",
    ),
    (
        "{motion_placeholder} Generate a relevant clinical one-liner describing this movement",
        "{description}",
    ),
    (
        "{motion_placeholder} Based on this motion, offer a brief clinical description highlighting key factors",
        "{description}",
    ),
    (
        "{motion_placeholder} What short clinical summary fits this movement observation?",
        "{description}",
    ),
    (
        "{motion_placeholder} Condense the most pertinent clinical information impacting this movement into one sentence",
        "{description}",
    ),
    (
        "{motion_placeholder} Formulate a brief clinical note summarizing the context for this motion",
        "{description}",
    ),
];

pub const CADENCE: [(&str, &str); 8] = [
    (
        "{motion_placeholder} What is the cadence of this walking in steps/min?",
        "{overall_Cadence:.0f} steps/min",
    ),
    (
        "{motion_placeholder} Calculate the steps per minute for the walking pattern.",
        "{overall_Cadence:.0f} steps/min",
    ),
    (
        "{motion_placeholder} Determine the walking cadence (steps/minute).",
        "{overall_Cadence:.0f} steps/min",
    ),
    (
        "{motion_placeholder} Provide the walking cadence in steps/min for the motion sequence.",
        "{overall_Cadence:.0f} steps/min",
    ),
    (
        "{motion_placeholder} For the gait shown, what is the cadence in steps per minute?",
        "{overall_Cadence:.0f} steps/min",
    ),
    (
        "{motion_placeholder} How many steps per minute are observed in this motion?",
        "{overall_Cadence:.0f} steps/min",
    ),
    (
        "{motion_placeholder} At what cadence is this person walking?",
        "{overall_Cadence:.0f} steps/min",
    ),
    (
        "{motion_placeholder} What is their cadence?",
        "{overall_Cadence:.0f} steps/min",
    ),
];

pub const WALKING_SPEED: [(&str, &str); 6] = [
    (
        "{motion_placeholder} What is the speed of this walking in m/s?",
        "{stride_m_s:.2f} m/s",
    ),
    (
        "{motion_placeholder} Calculate the walking velocity in m/s for the motion sequence.",
        "{stride_m_s:.2f} m/s",
    ),
    (
        "{motion_placeholder} Determine the speed of ambulation in meters per second.",
        "{stride_m_s:.2f} m/s",
    ),
    (
        "{motion_placeholder} Express the walking speed shown in in m/s.",
        "{stride_m_s:.2f} m/s",
    ),
    (
        "{motion_placeholder} How fast is this person walking?",
        "{stride_m_s:.2f} m/s",
    ),
    (
        "{motion_placeholder} What is the walking speed?",
        "{stride_m_s:.2f} m/s",
    ),
];

pub const FALLS: [(&str, &str); 4] = [
    (
        "{motion_placeholder} Does this person have a history of falls?",
        "{fall_history}",
    ),
    (
        "{motion_placeholder} Has this person fallen in the past?",
        "{fall_history}",
    ),
    (
        "{motion_placeholder} Is a fall history likely for someone who moves like this?",
        "{fall_history}",
    ),
    (
        "{motion_placeholder} Based on this movement, has the person experienced falls?",
        "{fall_history}",
    ),
];

pub const TUG_TIME: [(&str, &str); 4] = [
    (
        "{motion_placeholder} How long did this person take to complete the Timed Up and Go test?",
        "{tug_time:.1f} s",
    ),
    (
        "{motion_placeholder} What is the Timed Up and Go completion time?",
        "{tug_time:.1f} s",
    ),
    (
        "{motion_placeholder} Estimate the TUG time in seconds.",
        "{tug_time:.1f} s",
    ),
    (
        "{motion_placeholder} How many seconds did the Timed Up and Go take?",
        "{tug_time:.1f} s",
    ),
];

pub const FSST_TIME: [(&str, &str); 4] = [
    (
        "{motion_placeholder} How long did this person take to complete the Four Square Step Test?",
        "{fsst_time:.1f} s",
    ),
    (
        "{motion_placeholder} What is the Four Square Step Test completion time?",
        "{fsst_time:.1f} s",
    ),
    (
        "{motion_placeholder} Estimate the FSST time in seconds.",
        "{fsst_time:.1f} s",
    ),
    (
        "{motion_placeholder} How many seconds did the Four Square Step Test take?",
        "{fsst_time:.1f} s",
    ),
];
